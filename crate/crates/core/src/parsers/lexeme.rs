//! The one lexeme classifier used wherever untyped text becomes a scalar.

use std::sync::LazyLock;

use regex::Regex;

use crate::model::Value;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[+-]?(?:[0-9]+(?P<frac>\.[0-9]*)?|(?P<lead>\.[0-9]+))(?P<exp>[eE][+-]?[0-9]+)?$")
        .unwrap()
});

/// Classifies a lexeme as Boolean, Integer, Float or Text.
///
/// `true`/`false` are booleans. A numeric lexeme without a decimal point or
/// exponent is an Integer when it fits in 64 bits; any other numeric lexeme
/// with a finite value is a Float. Everything else, including surrounding
/// whitespace, `nan` and `inf`, stays Text.
pub fn classify(lexeme: &str) -> Value {
    match lexeme {
        "true" => return Value::Boolean(true),
        "false" => return Value::Boolean(false),
        _ => {}
    }
    let Some(caps) = NUMBER.captures(lexeme) else {
        return Value::Text(lexeme.to_string());
    };
    let integral = caps.name("frac").is_none()
        && caps.name("lead").is_none()
        && caps.name("exp").is_none();
    if integral {
        if let Ok(i) = lexeme.parse::<i64>() {
            return Value::Integer(i);
        }
    }
    match lexeme.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::Float(f),
        _ => Value::Text(lexeme.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds() {
        assert_eq!(classify("4"), Value::Integer(4));
        assert_eq!(classify("-12"), Value::Integer(-12));
        assert_eq!(classify("+7"), Value::Integer(7));
        assert_eq!(classify("10.0"), Value::Float(10.0));
        assert_eq!(classify("1e3"), Value::Float(1000.0));
        assert_eq!(classify(".5"), Value::Float(0.5));
        assert_eq!(classify("2."), Value::Float(2.0));
        assert_eq!(classify("true"), Value::Boolean(true));
        assert_eq!(classify("False"), Value::Text("False".into()));
        assert_eq!(classify("nan"), Value::Text("nan".into()));
        assert_eq!(classify("inf"), Value::Text("inf".into()));
        assert_eq!(classify("1e999"), Value::Text("1e999".into()));
        assert_eq!(classify(" 4"), Value::Text(" 4".into()));
        assert_eq!(classify(""), Value::Text(String::new()));
        assert_eq!(classify("0x10"), Value::Text("0x10".into()));
    }

    #[test]
    fn oversized_integer_lexeme_becomes_float() {
        assert_eq!(classify("9223372036854775807"), Value::Integer(i64::MAX));
        assert_eq!(
            classify("9223372036854775808"),
            Value::Float(9223372036854775808.0)
        );
    }

    #[test]
    fn debug_float_rendering_classifies_back_to_float() {
        for f in [16.0, 1e16, 1e-7, -0.25, 123456.789] {
            assert_eq!(classify(&format!("{f:?}")), Value::Float(f));
        }
    }
}
