use std::sync::{Arc, LazyLock};

use regex::Regex;

use super::lexeme::classify;
use super::{decode, ParseError, Parser, ParserError};
use crate::model::{Map, Value};

pub(super) fn all() -> Vec<(&'static str, Arc<dyn Parser>)> {
    vec![
        ("keyvalue", Arc::new(KeyValue)),
        ("time", Arc::new(Time)),
        ("json", Arc::new(Json)),
        ("envdump", Arc::new(EnvDump)),
        ("regex_capture", Arc::new(RegexCapture)),
    ]
}

fn text_option<'a>(options: &'a Map, key: &str) -> Result<Option<&'a str>, String> {
    match options.get(key) {
        None => Ok(None),
        Some(Value::Text(s)) => Ok(Some(s)),
        Some(other) => Err(format!("option {key:?} must be a string, got {}", other.kind_name())),
    }
}

fn options_error(parser: &str) -> impl FnOnce(String) -> ParserError + '_ {
    move |message| ParserError::Options {
        parser: parser.to_string(),
        message,
    }
}

struct KeyValue;

impl KeyValue {
    fn delimiter(options: &Map) -> Result<&str, String> {
        let delim = text_option(options, "delimiter")?.unwrap_or(":");
        if delim.is_empty() {
            return Err("delimiter must not be empty".into());
        }
        Ok(delim)
    }
}

impl Parser for KeyValue {
    fn parse(&self, options: &Map, bytes: &[u8]) -> Result<Value, ParserError> {
        let delim = Self::delimiter(options).map_err(options_error("keyvalue"))?;
        parse_keyvalue(bytes, delim).map(Value::Map)
    }

    fn check_options(&self, options: &Map) -> Result<(), String> {
        Self::delimiter(options).map(drop)
    }
}

/// Parses `key <delim> value` lines. Blank lines and lines starting with
/// `#` are ignored; values go through the lexeme classifier; a repeated key
/// keeps its last value.
pub fn parse_keyvalue(bytes: &[u8], delimiter: &str) -> Result<Map, ParserError> {
    let text = decode(bytes)?;
    let mut out = Map::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let column = raw.len() - raw.trim_start().len() + 1;
        let Some((key, value)) = line.split_once(delimiter) else {
            return Err(ParseError::at(
                idx + 1,
                column,
                format!("expected `key {delimiter} value`"),
            )
            .into());
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ParseError::at(idx + 1, column, "empty key").into());
        }
        // shift_remove keeps the map ordered by last assignment
        out.shift_remove(key);
        out.insert(key.to_string(), classify(value.trim()));
    }
    Ok(out)
}

struct Time;

impl Parser for Time {
    fn parse(&self, _options: &Map, bytes: &[u8]) -> Result<Value, ParserError> {
        parse_time(bytes).map(Value::Map)
    }
}

static POSIX_DURATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([0-9]+)m([0-9]+(?:\.[0-9]*)?)s$").unwrap());
static PLAIN_SECONDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[0-9]+(?:\.[0-9]+)?$").unwrap());

const TIME_LABELS: [&str; 3] = ["real", "user", "sys"];

/// Parses the report of the shell `time` keyword into seconds.
///
/// Accepts `MmS.SSSs` durations (bash default) and plain decimal seconds
/// (`time -p`). Lines not starting with one of the labels are ignored.
pub fn parse_time(bytes: &[u8]) -> Result<Map, ParserError> {
    let text = decode(bytes)?;
    let mut found: [Option<f64>; 3] = [None; 3];
    for (idx, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let Some(slot) = TIME_LABELS.iter().position(|l| *l == label) else {
            continue;
        };
        let lineno = idx + 1;
        let Some(duration) = tokens.next() else {
            return Err(ParseError::at(lineno, line.len() + 1, format!("missing duration after `{label}`")).into());
        };
        let column = line.find(duration).map_or(1, |p| p + 1);
        if tokens.next().is_some() {
            return Err(ParseError::at(lineno, column, "unexpected text after duration").into());
        }
        let seconds = parse_duration(duration)
            .ok_or_else(|| ParseError::at(lineno, column, format!("malformed duration {duration:?}")))?;
        found[slot] = Some(seconds);
    }
    let mut out = Map::new();
    for (label, seconds) in TIME_LABELS.iter().zip(found) {
        let seconds = seconds
            .ok_or_else(|| ParseError::unpositioned(format!("missing `{label}` line")))?;
        out.insert(label.to_string(), Value::Float(seconds));
    }
    Ok(out)
}

fn parse_duration(token: &str) -> Option<f64> {
    let seconds = if let Some(caps) = POSIX_DURATION.captures(token) {
        let minutes: f64 = caps[1].parse().ok()?;
        let secs: f64 = caps[2].parse().ok()?;
        minutes * 60.0 + secs
    } else if PLAIN_SECONDS.is_match(token) {
        token.parse().ok()?
    } else {
        return None;
    };
    seconds.is_finite().then_some(seconds)
}

struct Json;

impl Parser for Json {
    fn parse(&self, _options: &Map, bytes: &[u8]) -> Result<Value, ParserError> {
        parse_json(bytes)
    }
}

/// Parses a JSON document. Numbers without fraction or exponent that fit
/// in an `i64` become Integer; all other numbers become Float.
pub fn parse_json(bytes: &[u8]) -> Result<Value, ParserError> {
    let text = decode(bytes)?;
    let doc: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ParseError::at(e.line(), e.column(), e.to_string()))?;
    Ok(from_serde(doc))
}

pub fn from_serde(doc: serde_json::Value) -> Value {
    match doc {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Boolean(b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Value::Integer(i),
            None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        serde_json::Value::String(s) => Value::Text(s),
        serde_json::Value::Array(items) => Value::List(items.into_iter().map(from_serde).collect()),
        serde_json::Value::Object(obj) => {
            Value::Map(obj.into_iter().map(|(k, v)| (k, from_serde(v))).collect())
        }
    }
}

struct EnvDump;

impl Parser for EnvDump {
    fn parse(&self, _options: &Map, bytes: &[u8]) -> Result<Value, ParserError> {
        parse_envdump(bytes).map(Value::Map)
    }
}

/// Parses `NAME=value` lines; values stay Text. Lines without `=` (or with
/// an empty name) are skipped.
pub fn parse_envdump(bytes: &[u8]) -> Result<Map, ParserError> {
    let text = decode(bytes)?;
    let mut out = Map::new();
    for line in text.lines() {
        let Some((name, value)) = line.split_once('=') else {
            continue;
        };
        if name.is_empty() {
            continue;
        }
        out.shift_remove(name);
        out.insert(name.to_string(), Value::Text(value.to_string()));
    }
    Ok(out)
}

struct RegexCapture;

impl RegexCapture {
    fn compile(options: &Map) -> Result<Regex, String> {
        let pattern = text_option(options, "pattern")?.ok_or("missing option \"pattern\"")?;
        let re = Regex::new(pattern).map_err(|e| e.to_string())?;
        if re.capture_names().flatten().next().is_none() {
            return Err("pattern has no named capture group".into());
        }
        Ok(re)
    }
}

impl Parser for RegexCapture {
    fn parse(&self, options: &Map, bytes: &[u8]) -> Result<Value, ParserError> {
        let re = Self::compile(options).map_err(options_error("regex_capture"))?;
        parse_regex_capture_with(bytes, &re).map(Value::Map)
    }

    fn check_options(&self, options: &Map) -> Result<(), String> {
        Self::compile(options).map(drop)
    }
}

/// Extracts the named groups of the first match of `pattern`. Captured text
/// goes through the lexeme classifier; groups that did not participate in
/// the match are left out.
pub fn parse_regex_capture(bytes: &[u8], pattern: &str) -> Result<Map, ParserError> {
    let mut options = Map::new();
    options.insert("pattern".into(), Value::Text(pattern.to_string()));
    let re = RegexCapture::compile(&options).map_err(options_error("regex_capture"))?;
    parse_regex_capture_with(bytes, &re)
}

fn parse_regex_capture_with(bytes: &[u8], re: &Regex) -> Result<Map, ParserError> {
    let text = decode(bytes)?;
    let caps = re
        .captures(text)
        .ok_or_else(|| ParseError::unpositioned(format!("pattern {:?} does not match", re.as_str())))?;
    let mut out = Map::new();
    for name in re.capture_names().flatten() {
        if let Some(m) = caps.name(name) {
            out.insert(name.to_string(), classify(m.as_str()));
        }
    }
    Ok(out)
}
