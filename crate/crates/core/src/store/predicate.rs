use std::cmp::Ordering;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::model::Value;
use crate::parsers::classify;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid predicate {text:?}: {reason}")]
pub struct PredicateSyntaxError {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn token(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn from_token(t: &str) -> Option<Self> {
        Some(match t {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

/// `path OP operand` over a record's metadata body. The path is
/// dot-separated; a unit-wrapped leaf compares by its `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    path: Vec<String>,
    op: CmpOp,
    operand: Value,
}

static PREDICATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*([^\s=!<>]+)\s*(==|!=|<=|>=|<|>)\s*(.*?)\s*$").unwrap()
});

impl Predicate {
    pub fn new(path: &str, op: CmpOp, operand: Value) -> Result<Self, PredicateSyntaxError> {
        let text = format!("{path} {} {operand}", op.token());
        let err = |reason: &str| PredicateSyntaxError {
            text: text.clone(),
            reason: reason.into(),
        };
        let segments: Vec<String> = path.split('.').map(str::to_string).collect();
        if segments.iter().any(String::is_empty) {
            return Err(err("empty path segment"));
        }
        if !matches!(
            operand,
            Value::Boolean(_) | Value::Integer(_) | Value::Float(_) | Value::Text(_) | Value::Null
        ) {
            return Err(err("operand must be a scalar"));
        }
        if op.is_ordering() && !operand.is_numeric() {
            return Err(err("ordering comparison needs a numeric operand"));
        }
        Ok(Self {
            path: segments,
            op,
            operand,
        })
    }

    /// Parses `path OP value`, e.g. `run.virtual_processes == 16`. The value
    /// goes through the parsers' lexeme classifier unless double-quoted.
    pub fn parse(text: &str) -> Result<Self, PredicateSyntaxError> {
        let err = |reason: &str| PredicateSyntaxError {
            text: text.to_string(),
            reason: reason.into(),
        };
        let caps = PREDICATE
            .captures(text)
            .ok_or_else(|| err("expected `path OP value` with OP one of == != < <= > >="))?;
        let op = CmpOp::from_token(&caps[2]).ok_or_else(|| err("unknown operator"))?;
        let raw = &caps[3];
        if raw.is_empty() {
            return Err(err("missing value"));
        }
        let operand = match raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')) {
            Some(inner) => Value::Text(inner.to_string()),
            None => classify(raw),
        };
        Self::new(&caps[1], op, operand).map_err(|e| err(&e.reason))
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    pub fn op(&self) -> CmpOp {
        self.op
    }

    pub fn operand(&self) -> &Value {
        &self.operand
    }

    /// A missing path never matches.
    pub fn matches(&self, body: &Value) -> bool {
        let Some(found) = resolve_dotted(body, &self.path) else {
            return false;
        };
        match self.op {
            CmpOp::Eq => loosely_equal(found, &self.operand),
            CmpOp::Ne => !loosely_equal(found, &self.operand),
            op => match numeric_cmp(found, &self.operand) {
                None => false,
                Some(ord) => match op {
                    CmpOp::Lt => ord == Ordering::Less,
                    CmpOp::Le => ord != Ordering::Greater,
                    CmpOp::Gt => ord == Ordering::Greater,
                    CmpOp::Ge => ord != Ordering::Less,
                    CmpOp::Eq | CmpOp::Ne => unreachable!(),
                },
            },
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.path.join("."), self.op.token(), self.operand)
    }
}

/// Follows a dotted path; unwraps `{"value", "unit"}` at the end.
pub fn resolve_dotted<'a, S: AsRef<str>>(body: &'a Value, path: &[S]) -> Option<&'a Value> {
    let found = body.get_segments(path)?;
    Some(unit_value(found).unwrap_or(found))
}

fn unit_value(v: &Value) -> Option<&Value> {
    let m = v.as_map()?;
    if m.len() == 2 && m.get("unit").is_some_and(|u| matches!(u, Value::Text(_))) {
        m.get("value")
    } else {
        None
    }
}

/// Integer and Float compare by numeric value; other kinds structurally.
pub(crate) fn loosely_equal(a: &Value, b: &Value) -> bool {
    match numeric_cmp(a, b) {
        Some(ord) => ord == Ordering::Equal,
        None => !(a.is_numeric() && b.is_numeric()) && a == b,
    }
}

fn numeric_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Integer(i), Value::Float(f)) => cmp_int_float(*i, *f),
        (Value::Float(f), Value::Integer(i)) => cmp_int_float(*i, *f).map(Ordering::reverse),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y),
        _ => None,
    }
}

/// Exact comparison of an i64 with an f64 (no rounding of large integers).
fn cmp_int_float(i: i64, f: f64) -> Option<Ordering> {
    if f.is_nan() {
        return None;
    }
    // i64 range is [-2^63, 2^63); both bounds are exact in f64
    if f >= 9223372036854775808.0 {
        return Some(Ordering::Less);
    }
    if f < -9223372036854775808.0 {
        return Some(Ordering::Greater);
    }
    let t = f.trunc();
    let ti = t as i64;
    match i.cmp(&ti) {
        Ordering::Equal if f > t => Some(Ordering::Less),
        Ordering::Equal if f < t => Some(Ordering::Greater),
        ord => Some(ord),
    }
}
