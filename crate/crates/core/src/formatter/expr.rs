//! Path expressions and arithmetic compute expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | '${' path '}' | '(' expr ')'
//! path   := rule ('/' segment)*
//! ```

use std::fmt;

use thiserror::Error;

use crate::model::{is_identifier, split_pointer};

/// `rule/pointer` reference into the fragment namespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathExpr {
    pub rule: String,
    pub pointer: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid path expression {text:?}: {reason}")]
pub struct PathSyntaxError {
    pub text: String,
    pub reason: String,
}

impl PathExpr {
    pub fn parse(text: &str) -> Result<Self, PathSyntaxError> {
        let err = |reason: &str| PathSyntaxError {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let (rule, rest) = match text.split_once('/') {
            Some((rule, rest)) => (rule, Some(rest)),
            None => (text, None),
        };
        if !is_identifier(rule) {
            return Err(err("rule segment must be an identifier"));
        }
        let pointer = match rest {
            None => Vec::new(),
            Some("") => return Err(err("trailing '/'")),
            Some(rest) => split_pointer(rest)
                .map_err(|e| err(e.reason))?
                .into_iter()
                .map(str::to_string)
                .collect(),
        };
        Ok(Self {
            rule: rule.to_string(),
            pointer,
        })
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rule)?;
        for seg in &self.pointer {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn apply(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            BinOp::Add => lhs + rhs,
            BinOp::Sub => lhs - rhs,
            BinOp::Mul => lhs * rhs,
            BinOp::Div => lhs / rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Ref(PathExpr),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {message}")]
pub struct ExprSyntaxError {
    /// 1-based character column.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("reference ${{{0}}} does not resolve")]
    Missing(String),
    #[error("{0}")]
    Compute(String),
}

/// A parsed compute directive.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeExpr {
    source: String,
    root: Expr,
}

impl ComputeExpr {
    pub fn parse(text: &str) -> Result<Self, ExprSyntaxError> {
        let mut p = ExprParser {
            chars: text.chars().collect(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.error(format!("unexpected {:?}", p.chars[p.pos])));
        }
        Ok(Self {
            source: text.to_string(),
            root,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn references(&self) -> Vec<&PathExpr> {
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a PathExpr>) {
            match e {
                Expr::Number(_) => {}
                Expr::Ref(p) => out.push(p),
                Expr::Binary(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Evaluates left to right over 64-bit floats. `resolve` yields the
    /// numeric value of a reference.
    pub fn eval<F>(&self, mut resolve: F) -> Result<f64, EvalError>
    where
        F: FnMut(&PathExpr) -> Result<f64, EvalError>,
    {
        eval_node(&self.root, &mut resolve)
    }
}

impl fmt::Display for ComputeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn eval_node<F>(e: &Expr, resolve: &mut F) -> Result<f64, EvalError>
where
    F: FnMut(&PathExpr) -> Result<f64, EvalError>,
{
    match e {
        Expr::Number(n) => Ok(*n),
        Expr::Ref(p) => resolve(p),
        Expr::Binary(op, l, r) => {
            let lhs = eval_node(l, resolve)?;
            let rhs = eval_node(r, resolve)?;
            if *op == BinOp::Div && rhs == 0.0 {
                return Err(EvalError::Compute("division by zero".into()));
            }
            let out = op.apply(lhs, rhs);
            if !out.is_finite() {
                return Err(EvalError::Compute(format!("non-finite result of {lhs} {op:?} {rhs}")));
            }
            Ok(out)
        }
    }
}

struct ExprParser {
    chars: Vec<char>,
    pos: usize,
}

impl ExprParser {
    fn error(&self, message: impl Into<String>) -> ExprSyntaxError {
        ExprSyntaxError {
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprSyntaxError> {
        let mut lhs = self.term()?;
        while let Some(op) = match self.peek() {
            Some('+') => Some(BinOp::Add),
            Some('-') => Some(BinOp::Sub),
            _ => None,
        } {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprSyntaxError> {
        let mut lhs = self.factor()?;
        while let Some(op) = match self.peek() {
            Some('*') => Some(BinOp::Mul),
            Some('/') => Some(BinOp::Div),
            _ => None,
        } {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ExprSyntaxError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some('$') => self.reference(),
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => Err(self.error(format!("unexpected {c:?}"))),
        }
    }

    fn reference(&mut self) -> Result<Expr, ExprSyntaxError> {
        if self.chars.get(self.pos + 1) != Some(&'{') {
            return Err(self.error("expected '${'"));
        }
        let start = self.pos + 2;
        let Some(len) = self.chars[start..].iter().position(|&c| c == '}') else {
            return Err(self.error("unterminated '${'"));
        };
        let text: String = self.chars[start..start + len].iter().collect();
        let path = PathExpr::parse(&text).map_err(|e| ExprSyntaxError {
            column: start + 1,
            message: e.to_string(),
        })?;
        self.pos = start + len + 1;
        Ok(Expr::Ref(path))
    }

    fn number(&mut self) -> Result<Expr, ExprSyntaxError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.chars.get(p.pos).is_some_and(|c| c.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let int_digits = digits(self);
        let mut frac_digits = 0;
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            frac_digits = digits(self);
        }
        if int_digits + frac_digits == 0 {
            self.pos = start;
            return Err(self.error("malformed number"));
        }
        if matches!(self.chars.get(self.pos), Some('e' | 'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.chars.get(self.pos), Some('+' | '-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = mark;
                return Err(self.error("malformed exponent"));
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match text.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(Expr::Number(n)),
            _ => {
                self.pos = start;
                Err(self.error(format!("number {text:?} out of range")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_plain(text: &str) -> Result<f64, EvalError> {
        ComputeExpr::parse(text)
            .unwrap()
            .eval(|p| Err(EvalError::Missing(p.to_string())))
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_plain("2 + 3 * 4"), Ok(14.0));
        assert_eq!(eval_plain("(2 + 3) * 4"), Ok(20.0));
        assert_eq!(eval_plain("10 - 4 - 3"), Ok(3.0));
        assert_eq!(eval_plain("64 / 4 / 2"), Ok(8.0));
        assert_eq!(eval_plain("1.5e1 + .5"), Ok(15.5));
    }

    #[test]
    fn division_by_zero_and_overflow() {
        assert!(matches!(eval_plain("1 / 0"), Err(EvalError::Compute(_))));
        assert!(matches!(eval_plain("1e308 * 10"), Err(EvalError::Compute(_))));
    }

    #[test]
    fn references_are_collected() {
        let e = ComputeExpr::parse("${time/real} / ${config/sim_time}").unwrap();
        let refs: Vec<String> = e.references().iter().map(|p| p.to_string()).collect();
        assert_eq!(refs, ["time/real", "config/sim_time"]);
        let got = e.eval(|p| match p.to_string().as_str() {
            "time/real" => Ok(83.45),
            "config/sim_time" => Ok(10.0),
            other => Err(EvalError::Missing(other.into())),
        });
        assert_eq!(got, Ok(83.45 / 10.0));
        assert_eq!(got, Ok(8.345));
    }

    #[test]
    fn syntax_errors() {
        for (text, column) in [
            ("(1 + 2", 7),
            ("1 +", 4),
            ("1 2", 3),
            ("${config/procs", 1),
            ("${9bad/x}", 3),
            ("${config//x}", 3),
            ("$config", 1),
            ("-1", 1),
            ("", 1),
            ("1e", 2),
        ] {
            let err = ComputeExpr::parse(text).unwrap_err();
            assert_eq!(err.column, column, "{text}: {err}");
        }
    }

    #[test]
    fn path_expr_parsing() {
        let p = PathExpr::parse("config/procs").unwrap();
        assert_eq!(p.rule, "config");
        assert_eq!(p.pointer, ["procs"]);
        assert_eq!(PathExpr::parse("logs/0/wall").unwrap().pointer, ["0", "wall"]);
        assert!(PathExpr::parse("time").unwrap().pointer.is_empty());
        assert!(PathExpr::parse("time/").is_err());
        assert!(PathExpr::parse("/time").is_err());
        assert!(PathExpr::parse("time//real").is_err());
    }
}
