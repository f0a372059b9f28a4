//! Domain types shared by every pipeline stage.
//!
//! [`Value`] is the neutral tree that parsers produce, the formatter
//! reshapes, the exporter serializes and the store persists. Maps keep
//! insertion order so intermediate documents read the way their sources
//! were written; canonical export sorts keys.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use regex::Regex;
use thiserror::Error;

/// Insertion-ordered map used for [`Value::Map`].
pub type Map = IndexMap<String, Value>;

/// A heterogeneous metadata value.
///
/// Equality is structural: `Integer(16)` and `Float(16.0)` are different
/// values, and map equality ignores key order.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Boolean(bool),
    Integer(i64),
    Float(f64),
    Text(String),
    List(Vec<Value>),
    Map(Map),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed pointer {pointer:?}: {reason}")]
pub struct PointerSyntaxError {
    pub pointer: String,
    pub reason: &'static str,
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Boolean(_) => "boolean",
            Value::Integer(_) => "integer",
            Value::Float(_) => "float",
            Value::Text(_) => "string",
            Value::List(_) => "array",
            Value::Map(_) => "object",
        }
    }

    pub fn as_map(&self) -> Option<&Map> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Numeric view with Integer promoted to Float.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Integer(_) | Value::Float(_))
    }

    /// Looks up a `/`-separated pointer. The empty pointer addresses the
    /// root; list elements are addressed by decimal index. Absent paths
    /// yield `Ok(None)`.
    pub fn get(&self, pointer: &str) -> Result<Option<&Value>, PointerSyntaxError> {
        let segments = split_pointer(pointer)?;
        Ok(self.get_segments(&segments))
    }

    pub(crate) fn get_segments<S: AsRef<str>>(&self, segments: &[S]) -> Option<&Value> {
        let mut current = self;
        for segment in segments {
            let segment = segment.as_ref();
            current = match current {
                Value::Map(m) => m.get(segment)?,
                Value::List(items) => items.get(parse_index(segment)?)?,
                _ => return None,
            };
        }
        Some(current)
    }

    /// True when every float anywhere in the tree is finite.
    pub fn all_floats_finite(&self) -> bool {
        match self {
            Value::Float(f) => f.is_finite(),
            Value::List(items) => items.iter().all(Value::all_floats_finite),
            Value::Map(m) => m.values().all(Value::all_floats_finite),
            _ => true,
        }
    }
}

/// Splits a pointer into its segments, rejecting empty segments.
pub fn split_pointer(pointer: &str) -> Result<Vec<&str>, PointerSyntaxError> {
    if pointer.is_empty() {
        return Ok(Vec::new());
    }
    let segments: Vec<&str> = pointer.split('/').collect();
    if segments.iter().any(|s| s.is_empty()) {
        let reason = if pointer.starts_with('/') {
            "leading '/'"
        } else if pointer.ends_with('/') {
            "trailing '/'"
        } else {
            "empty segment"
        };
        return Err(PointerSyntaxError {
            pointer: pointer.to_string(),
            reason,
        });
    }
    Ok(segments)
}

pub(crate) fn parse_index(segment: &str) -> Option<usize> {
    if segment.is_empty() || !segment.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    segment.parse().ok()
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::exporter::to_compact_string(self))
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<Map> for Value {
    fn from(v: Map) -> Self {
        Value::Map(v)
    }
}

impl From<Vec<Value>> for Value {
    fn from(v: Vec<Value>) -> Self {
        Value::List(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    ExactName,
    Regex,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule name {0:?} is not an identifier ([A-Za-z_][A-Za-z0-9_]*)")]
    InvalidName(String),
    #[error("rule name {0:?} is declared more than once")]
    DuplicateName(String),
    #[error("rule {name:?}: pattern does not compile: {source}")]
    BadPattern {
        name: String,
        #[source]
        source: regex::Error,
    },
    #[error("rule set is empty")]
    Empty,
}

/// Binds files whose base name matches `pattern` to a parser.
#[derive(Debug, Clone)]
pub struct FileDescriptionRule {
    pub name: String,
    pub pattern: String,
    pub kind: RuleKind,
    pub parser: String,
    pub required: bool,
    matcher: Option<Regex>,
}

impl FileDescriptionRule {
    pub fn exact(name: &str, file_name: &str, parser: &str) -> Result<Self, RuleError> {
        Self::new(name, file_name, RuleKind::ExactName, parser, true)
    }

    pub fn regex(name: &str, pattern: &str, parser: &str) -> Result<Self, RuleError> {
        Self::new(name, pattern, RuleKind::Regex, parser, true)
    }

    pub fn new(
        name: &str,
        pattern: &str,
        kind: RuleKind,
        parser: &str,
        required: bool,
    ) -> Result<Self, RuleError> {
        if !is_identifier(name) {
            return Err(RuleError::InvalidName(name.to_string()));
        }
        let matcher = match kind {
            RuleKind::ExactName => None,
            RuleKind::Regex => Some(Regex::new(&format!("^(?:{pattern})$")).map_err(|source| {
                RuleError::BadPattern {
                    name: name.to_string(),
                    source,
                }
            })?),
        };
        Ok(Self {
            name: name.to_string(),
            pattern: pattern.to_string(),
            kind,
            parser: parser.to_string(),
            required,
            matcher,
        })
    }

    pub fn optional(mut self) -> Self {
        self.required = false;
        self
    }

    /// Full-match against a base name.
    pub fn matches(&self, base_name: &str) -> bool {
        match &self.matcher {
            None => self.pattern == base_name,
            Some(re) => re.is_match(base_name),
        }
    }

    pub fn names_exactly(&self, base_name: &str) -> bool {
        self.kind == RuleKind::ExactName && self.pattern == base_name
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Ordered rules; declaration order is match priority.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<FileDescriptionRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<FileDescriptionRule>) -> Result<Self, RuleError> {
        if rules.is_empty() {
            return Err(RuleError::Empty);
        }
        let mut seen = HashSet::new();
        for rule in &rules {
            if !seen.insert(rule.name.as_str()) {
                return Err(RuleError::DuplicateName(rule.name.clone()));
            }
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[FileDescriptionRule] {
        &self.rules
    }

    pub fn get(&self, name: &str) -> Option<&FileDescriptionRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }
}

/// Parse output of one file, tagged with the rule that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub rule: String,
    pub path: String,
    pub body: Value,
}

/// A validated metadata document together with the hash of the schema
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMetadata {
    pub body: Value,
    pub schema_id: String,
}

impl StructuredMetadata {
    pub fn new(body: Value, schema_id: impl Into<String>) -> Self {
        Self {
            body,
            schema_id: schema_id.into(),
        }
    }
}

/// An annotated entry in the record store.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub uid: String,
    pub metadata: StructuredMetadata,
    pub blob_path: String,
    pub created_at: String,
}

pub fn is_uid(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
