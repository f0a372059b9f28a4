//! Parser registry and built-in parsers.
//!
//! A parser turns the bytes of one raw metadata file into a [`Value`]. Each
//! file description rule names a parser id plus options; the registry maps
//! ids to implementations. Built-ins: `keyvalue`, `time`, `json`, `envdump`
//! and `regex_capture`. Additional parsers are registered before the
//! pipeline starts and the registry is read-only afterwards.

mod builtin;
pub mod lexeme;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{Map, Value};

pub use builtin::{
    from_serde, parse_envdump, parse_json, parse_keyvalue, parse_regex_capture, parse_time,
};
pub use lexeme::classify;

/// Grammar violation, positioned where the input allows it (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl ParseError {
    pub fn at(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            line: Some(line),
            column: Some(column),
        }
    }

    pub fn unpositioned(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            line: None,
            column: None,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParserError {
    #[error("input is not valid UTF-8 (first invalid byte at offset {offset})")]
    Encoding { offset: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown parser {0:?}")]
    UnknownParser(String),
    #[error("parser {parser:?}: invalid options: {message}")]
    Options { parser: String, message: String },
    #[error("parser {0:?} is already registered")]
    RegistryConflict(String),
}

/// A parser implementation. Implementations must be pure.
pub trait Parser: Send + Sync {
    fn parse(&self, options: &Map, bytes: &[u8]) -> Result<Value, ParserError>;

    /// Rejects options this parser cannot work with; run at configuration time.
    fn check_options(&self, _options: &Map) -> Result<(), String> {
        Ok(())
    }
}

impl<F> Parser for F
where
    F: Fn(&Map, &[u8]) -> Result<Value, ParserError> + Send + Sync,
{
    fn parse(&self, options: &Map, bytes: &[u8]) -> Result<Value, ParserError> {
        self(options, bytes)
    }
}

/// The parser bound to a rule: registry id plus parser-specific options.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParserSpec {
    pub id: String,
    pub options: Map,
}

impl ParserSpec {
    pub fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            options: Map::new(),
        }
    }

    pub fn with_option(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.options.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Clone)]
pub struct ParserRegistry {
    parsers: HashMap<String, Arc<dyn Parser>>,
}

impl Default for ParserRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ParserRegistry {
    pub fn empty() -> Self {
        Self {
            parsers: HashMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        for (id, parser) in builtin::all() {
            reg.parsers.insert(id.to_string(), parser);
        }
        reg
    }

    pub fn register(&mut self, id: &str, parser: impl Parser + 'static) -> Result<(), ParserError> {
        if self.parsers.contains_key(id) {
            return Err(ParserError::RegistryConflict(id.to_string()));
        }
        self.parsers.insert(id.to_string(), Arc::new(parser));
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.parsers.contains_key(id)
    }

    pub fn check(&self, spec: &ParserSpec) -> Result<(), ParserError> {
        let parser = self.lookup(&spec.id)?;
        parser
            .check_options(&spec.options)
            .map_err(|message| ParserError::Options {
                parser: spec.id.clone(),
                message,
            })
    }

    pub fn parse(&self, spec: &ParserSpec, bytes: &[u8]) -> Result<Value, ParserError> {
        self.lookup(&spec.id)?.parse(&spec.options, bytes)
    }

    fn lookup(&self, id: &str) -> Result<&Arc<dyn Parser>, ParserError> {
        self.parsers
            .get(id)
            .ok_or_else(|| ParserError::UnknownParser(id.to_string()))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<&str, ParserError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParserError::Encoding {
        offset: e.valid_up_to(),
    })?;
    Ok(text.strip_prefix('\u{feff}').unwrap_or(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_by_id() {
        let reg = ParserRegistry::with_builtins();
        let v = reg.parse(&ParserSpec::new("json"), br#"{"seed": 7}"#).unwrap();
        assert_eq!(v.get("seed").unwrap(), Some(&Value::Integer(7)));
        assert_eq!(
            reg.parse(&ParserSpec::new("yaml"), b""),
            Err(ParserError::UnknownParser("yaml".into()))
        );
    }

    #[test]
    fn custom_parser_registration() {
        let mut reg = ParserRegistry::with_builtins();
        reg.register("lines", |_: &Map, bytes: &[u8]| {
            let text = decode(bytes)?;
            Ok(Value::Integer(text.lines().count() as i64))
        })
        .unwrap();
        assert_eq!(
            reg.parse(&ParserSpec::new("lines"), b"a\nb\nc").unwrap(),
            Value::Integer(3)
        );
        let dup = reg.register("json", |_: &Map, _: &[u8]| Ok(Value::Null));
        assert_eq!(dup, Err(ParserError::RegistryConflict("json".into())));
    }

    #[test]
    fn invalid_utf8_is_an_encoding_error() {
        let reg = ParserRegistry::with_builtins();
        for id in ["keyvalue", "time", "json", "envdump"] {
            assert_eq!(
                reg.parse(&ParserSpec::new(id), b"ab\xffcd"),
                Err(ParserError::Encoding { offset: 2 }),
                "{id}"
            );
        }
    }

    #[test]
    fn option_checks() {
        let reg = ParserRegistry::with_builtins();
        assert!(reg.check(&ParserSpec::new("regex_capture")).is_err());
        assert!(reg
            .check(&ParserSpec::new("regex_capture").with_option("pattern", "(no)names"))
            .is_err());
        assert!(reg
            .check(&ParserSpec::new("regex_capture").with_option("pattern", "(?<a>x)"))
            .is_ok());
        assert!(reg
            .check(&ParserSpec::new("keyvalue").with_option("delimiter", ""))
            .is_err());
        assert!(reg
            .check(&ParserSpec::new("keyvalue").with_option("delimiter", "="))
            .is_ok());
        assert!(matches!(
            reg.check(&ParserSpec::new("nope")),
            Err(ParserError::UnknownParser(_))
        ));
    }
}
