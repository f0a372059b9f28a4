//! Canonical JSON serialization and the exporter registry.
//!
//! Canonical form: UTF-8, object keys sorted by code point, floats in
//! their shortest round-tripping decimal form (always carrying a `.` or an
//! exponent so they read back as floats), integers bare. The pretty form
//! uses two-space indentation and ends with a newline; the compact form is
//! a single line with no insignificant whitespace.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{StructuredMetadata, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExportError {
    #[error("unknown exporter {0:?}")]
    UnknownExporter(String),
    #[error("exporter {0:?} is already registered")]
    RegistryConflict(String),
}

pub type ExportFn = Arc<dyn Fn(&StructuredMetadata) -> Vec<u8> + Send + Sync>;

/// Exporters keyed by format id. `json` is always registered.
#[derive(Clone)]
pub struct ExporterRegistry {
    exporters: HashMap<String, ExportFn>,
}

impl Default for ExporterRegistry {
    fn default() -> Self {
        let mut exporters: HashMap<String, ExportFn> = HashMap::new();
        exporters.insert("json".to_string(), Arc::new(export_json));
        Self { exporters }
    }
}

impl ExporterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, id: &str, f: F) -> Result<(), ExportError>
    where
        F: Fn(&StructuredMetadata) -> Vec<u8> + Send + Sync + 'static,
    {
        if self.exporters.contains_key(id) {
            return Err(ExportError::RegistryConflict(id.to_string()));
        }
        self.exporters.insert(id.to_string(), Arc::new(f));
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.exporters.contains_key(id)
    }

    pub fn export(&self, id: &str, meta: &StructuredMetadata) -> Result<Vec<u8>, ExportError> {
        let f = self
            .exporters
            .get(id)
            .ok_or_else(|| ExportError::UnknownExporter(id.to_string()))?;
        Ok(f(meta))
    }
}

/// Canonical pretty JSON of the metadata body.
pub fn export_json(meta: &StructuredMetadata) -> Vec<u8> {
    to_canonical_string(&meta.body).into_bytes()
}

/// Pretty canonical form, newline-terminated.
pub fn to_canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_pretty(&mut out, value, 0);
    out.push('\n');
    out
}

/// Single-line canonical form, no trailing newline.
pub fn to_compact_string(value: &Value) -> String {
    let mut out = String::new();
    write_compact(&mut out, value);
    out
}

fn write_pretty(out: &mut String, value: &Value, depth: usize) {
    match value {
        Value::List(items) if !items.is_empty() => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                write_pretty(out, item, depth + 1);
            }
            newline(out, depth);
            out.push(']');
        }
        Value::Map(m) if !m.is_empty() => {
            out.push('{');
            for (i, (key, item)) in sorted_entries(m).into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                write_string(out, key);
                out.push_str(": ");
                write_pretty(out, item, depth + 1);
            }
            newline(out, depth);
            out.push('}');
        }
        scalar => write_compact(out, scalar),
    }
}

fn write_compact(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Boolean(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Integer(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) => write_float(out, *f),
        Value::Text(s) => write_string(out, s),
        Value::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_compact(out, item);
            }
            out.push(']');
        }
        Value::Map(m) => {
            out.push('{');
            for (i, (key, item)) in sorted_entries(m).into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, key);
                out.push(':');
                write_compact(out, item);
            }
            out.push('}');
        }
    }
}

fn sorted_entries(m: &crate::model::Map) -> Vec<(&String, &Value)> {
    let mut entries: Vec<_> = m.iter().collect();
    // String ordering is bytewise UTF-8, which coincides with code point order.
    entries.sort_by(|a, b| a.0.cmp(b.0));
    entries
}

fn newline(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_float(out: &mut String, f: f64) {
    // Debug formatting is the shortest representation that round-trips and
    // always includes a '.' or an exponent. Non-finite floats are rejected
    // before export; render them as null rather than emit invalid JSON.
    if f.is_finite() {
        let _ = write!(out, "{f:?}");
    } else {
        out.push_str("null");
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Map;
    use crate::parsers::parse_json;

    fn meta(pairs: Vec<(&str, Value)>) -> StructuredMetadata {
        let body: Map = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        StructuredMetadata::new(Value::Map(body), "test")
    }

    #[test]
    fn keys_are_sorted() {
        let m = meta(vec![("b", Value::Integer(1)), ("a", Value::Integer(2))]);
        let text = String::from_utf8(export_json(&m)).unwrap();
        assert_eq!(text, "{\n  \"a\": 2,\n  \"b\": 1\n}\n");
    }

    #[test]
    fn integral_float_keeps_its_point() {
        let m = meta(vec![("x", Value::Float(16.0))]);
        let text = String::from_utf8(export_json(&m)).unwrap();
        assert!(text.contains("\"x\": 16.0"), "{text}");
        assert_eq!(parse_json(text.as_bytes()).unwrap(), m.body);
    }

    #[test]
    fn empty_object() {
        assert_eq!(export_json(&meta(vec![])), b"{}\n");
    }

    #[test]
    fn shortest_float_forms_parse_back() {
        for f in [0.1, 1e16, 1e-7, -0.0, f64::MAX, f64::MIN_POSITIVE, 8.345, 5e-324] {
            let text = to_compact_string(&Value::Float(f));
            assert_eq!(text.parse::<f64>().unwrap().to_bits(), f.to_bits(), "{text}");
            assert!(text.contains(['.', 'e']), "{text}");
        }
    }

    #[test]
    fn nested_pretty_layout() {
        let inner: Map = [("k".to_string(), Value::List(vec![Value::Integer(1), Value::Null]))]
            .into_iter()
            .collect();
        let m = meta(vec![("o", Value::Map(inner)), ("e", Value::List(vec![]))]);
        let text = String::from_utf8(export_json(&m)).unwrap();
        assert_eq!(
            text,
            "{\n  \"e\": [],\n  \"o\": {\n    \"k\": [\n      1,\n      null\n    ]\n  }\n}\n"
        );
    }

    #[test]
    fn compact_form_is_single_line() {
        let m = meta(vec![("s", Value::Text("a\nb\"\u{1}".into())), ("n", Value::Integer(-3))]);
        assert_eq!(to_compact_string(&m.body), r#"{"n":-3,"s":"a\nb\"\u0001"}"#);
    }

    #[test]
    fn registry_defaults_and_errors() {
        let mut reg = ExporterRegistry::new();
        let m = meta(vec![("a", Value::Integer(1))]);
        assert_eq!(reg.export("json", &m).unwrap(), export_json(&m));
        assert_eq!(
            reg.export("tsv", &m),
            Err(ExportError::UnknownExporter("tsv".into()))
        );
        reg.register("tsv", |_| b"a\t1\n".to_vec()).unwrap();
        assert_eq!(reg.export("tsv", &m).unwrap(), b"a\t1\n");
        assert!(matches!(
            reg.register("tsv", |_| Vec::new()),
            Err(ExportError::RegistryConflict(_))
        ));
        assert!(matches!(
            reg.register("json", |_| Vec::new()),
            Err(ExportError::RegistryConflict(_))
        ));
    }
}
