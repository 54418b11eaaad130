//! Axis constraints over a closed grammar.
//!
//! ```text
//! constraint := expr ("==" | "<=" | ">=" | "<" | ">") expr
//! expr       := term (("+" | "-") term)*
//! term       := atom (("*" | "//") atom)*
//! atom       := INT | NAME | NAME "[" "-"? INT "]" [".item()"]
//! ```
//!
//! A trailing `.item()` on an indexed tensor is accepted and dropped.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason} at byte {pos} in `{text}`")]
pub struct ConstraintParseError {
    pub text: String,
    pub pos: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintEvalError {
    #[error("unbound name `{0}`")]
    UnboundName(String),
    #[error("tensor `{0}` is not integer-typed")]
    NonIntegerTensorIndexed(String),
    #[error("index {index} out of range for `{tensor}` of length {len}")]
    IndexOutOfRange { tensor: String, index: i64, len: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Le,
    Ge,
    Lt,
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    FloorDiv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(i64),
    Axis(String),
    Index { tensor: String, index: i64 },
    Binary(Box<Expr>, ArithOp, Box<Expr>),
}

/// Source of integer tensors for indexed constraint terms.
pub trait TensorLookup {
    fn tensor(&self, name: &str) -> Option<&Tensor>;
}

impl TensorLookup for () {
    fn tensor(&self, _: &str) -> Option<&Tensor> {
        None
    }
}

impl TensorLookup for IndexMap<String, Tensor> {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl TensorLookup for BTreeMap<String, Tensor> {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// A parsed constraint. Equality and display use the normalized text.
#[derive(Debug, Clone)]
pub struct ConstraintExpr {
    /// Canonical rendering; equality compares this.
    text: String,
    /// As written, kept for serialization.
    source: String,
    lhs: Expr,
    op: CmpOp,
    rhs: Expr,
}

impl PartialEq for ConstraintExpr {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Eq for ConstraintExpr {}

impl ConstraintExpr {
    pub fn parse(text: &str) -> Result<Self, ConstraintParseError> {
        let tokens = lex(text)?;
        let mut p = Parser {
            text,
            tokens,
            pos: 0,
        };
        let lhs = p.expr()?;
        let op = match p.next() {
            Some((_, Tok::Cmp(op))) => op,
            Some((at, t)) => return Err(p.error(at, format!("expected comparison, found {t:?}"))),
            None => return Err(p.error(text.len(), "expected comparison operator".into())),
        };
        let rhs = p.expr()?;
        if let Some((at, t)) = p.next() {
            return Err(p.error(at, format!("unexpected trailing token {t:?}")));
        }
        let mut c = ConstraintExpr {
            text: String::new(),
            source: text.trim().to_string(),
            lhs,
            op,
            rhs,
        };
        c.text = c.to_string();
        Ok(c)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Axis names referenced outside of tensor indexing.
    pub fn axes(&self) -> Vec<&str> {
        let mut out = Vec::new();
        collect(&self.lhs, &mut out, &mut Vec::new());
        collect(&self.rhs, &mut out, &mut Vec::new());
        out
    }

    /// Tensor names that are indexed.
    pub fn tensors(&self) -> Vec<&str> {
        let mut out = Vec::new();
        collect(&self.lhs, &mut Vec::new(), &mut out);
        collect(&self.rhs, &mut Vec::new(), &mut out);
        out
    }

    /// True when the constraint can be checked from axis values alone.
    pub fn is_axis_only(&self) -> bool {
        self.tensors().is_empty()
    }

    pub fn eval(&self, axes: &BTreeMap<String, i64>, tensors: &dyn TensorLookup) -> Result<bool, ConstraintEvalError> {
        let l = eval_expr(&self.lhs, axes, tensors)?;
        let r = eval_expr(&self.rhs, axes, tensors)?;
        Ok(match self.op {
            CmpOp::Eq => l == r,
            CmpOp::Le => l <= r,
            CmpOp::Ge => l >= r,
            CmpOp::Lt => l < r,
            CmpOp::Gt => l > r,
        })
    }
}

/// Evaluates `c` under the given bindings.
pub fn eval_constraint(
    c: &ConstraintExpr,
    axes: &BTreeMap<String, i64>,
    tensors: &dyn TensorLookup,
) -> Result<bool, ConstraintEvalError> {
    c.eval(axes, tensors)
}

fn collect<'a>(e: &'a Expr, axes: &mut Vec<&'a str>, tensors: &mut Vec<&'a str>) {
    match e {
        Expr::Lit(_) => {}
        Expr::Axis(a) => axes.push(a),
        Expr::Index { tensor, .. } => tensors.push(tensor),
        Expr::Binary(l, _, r) => {
            collect(l, axes, tensors);
            collect(r, axes, tensors);
        }
    }
}

fn eval_expr(e: &Expr, axes: &BTreeMap<String, i64>, tensors: &dyn TensorLookup) -> Result<i64, ConstraintEvalError> {
    match e {
        Expr::Lit(v) => Ok(*v),
        Expr::Axis(name) => axes
            .get(name)
            .copied()
            .ok_or_else(|| ConstraintEvalError::UnboundName(name.clone())),
        Expr::Index { tensor, index } => {
            let t = tensors
                .tensor(tensor)
                .ok_or_else(|| ConstraintEvalError::UnboundName(tensor.clone()))?;
            let values = t
                .ints()
                .ok_or_else(|| ConstraintEvalError::NonIntegerTensorIndexed(tensor.clone()))?;
            let len = values.len();
            let pos = if *index < 0 { len as i64 + index } else { *index };
            if pos < 0 || pos >= len as i64 {
                return Err(ConstraintEvalError::IndexOutOfRange {
                    tensor: tensor.clone(),
                    index: *index,
                    len,
                });
            }
            Ok(values[pos as usize])
        }
        Expr::Binary(l, op, r) => {
            let a = eval_expr(l, axes, tensors)?;
            let b = eval_expr(r, axes, tensors)?;
            match op {
                ArithOp::Add => a.checked_add(b).ok_or(ConstraintEvalError::Overflow),
                ArithOp::Sub => a.checked_sub(b).ok_or(ConstraintEvalError::Overflow),
                ArithOp::Mul => a.checked_mul(b).ok_or(ConstraintEvalError::Overflow),
                ArithOp::FloorDiv => floor_div(a, b),
            }
        }
    }
}

/// Python-style `//`: rounds toward negative infinity.
fn floor_div(a: i64, b: i64) -> Result<i64, ConstraintEvalError> {
    if b == 0 {
        return Err(ConstraintEvalError::DivisionByZero);
    }
    let q = a.checked_div(b).ok_or(ConstraintEvalError::Overflow)?;
    if a % b != 0 && ((a < 0) != (b < 0)) {
        Ok(q - 1)
    } else {
        Ok(q)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Axis(a) => f.write_str(a),
            Expr::Index { tensor, index } => write!(f, "{tensor}[{index}]"),
            Expr::Binary(l, op, r) => {
                let op = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                    ArithOp::Mul => "*",
                    ArithOp::FloorDiv => "//",
                };
                write!(f, "{l} {op} {r}")
            }
        }
    }
}

impl fmt::Display for ConstraintExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            CmpOp::Eq => "==",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
        };
        write!(f, "{} {op} {}", self.lhs, self.rhs)
    }
}

impl serde::Serialize for ConstraintExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Name(String),
    Plus,
    Minus,
    Star,
    FloorDiv,
    Cmp(CmpOp),
    LBracket,
    RBracket,
    Item,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ConstraintParseError> {
    let err = |pos: usize, reason: &str| ConstraintParseError {
        text: text.to_string(),
        pos,
        reason: reason.to_string(),
    };
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let two = bytes.get(i..i + 2);
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = text[start..i]
                    .parse()
                    .map_err(|_| err(start, "integer literal out of range"))?;
                out.push((start, Tok::Int(v)));
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Name(text[start..i].to_string())));
                continue;
            }
            _ => {}
        }
        let (tok, len) = match (c, two) {
            (_, Some(b"//")) => (Tok::FloorDiv, 2),
            (_, Some(b"==")) => (Tok::Cmp(CmpOp::Eq), 2),
            (_, Some(b"<=")) => (Tok::Cmp(CmpOp::Le), 2),
            (_, Some(b">=")) => (Tok::Cmp(CmpOp::Ge), 2),
            (b'<', _) => (Tok::Cmp(CmpOp::Lt), 1),
            (b'>', _) => (Tok::Cmp(CmpOp::Gt), 1),
            (b'+', _) => (Tok::Plus, 1),
            (b'-', _) => (Tok::Minus, 1),
            (b'*', _) => (Tok::Star, 1),
            (b'[', _) => (Tok::LBracket, 1),
            (b']', _) => (Tok::RBracket, 1),
            (b'.', _) if text[i..].starts_with(".item()") => (Tok::Item, 7),
            _ => return Err(err(i, &format!("unexpected character `{}`", c as char))),
        };
        out.push((start, tok));
        i += len;
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, pos: usize, reason: String) -> ConstraintParseError {
        ConstraintParseError {
            text: self.text.to_string(),
            pos,
            reason,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<(usize, Tok)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ConstraintParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => ArithOp::Add,
                Some(Tok::Minus) => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(Box::new(lhs), op, Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ConstraintParseError> {
        let mut lhs = self.atom()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => ArithOp::Mul,
                Some(Tok::FloorDiv) => ArithOp::FloorDiv,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = Expr::Binary(Box::new(lhs), op, Box::new(rhs));
        }
    }

    fn atom(&mut self) -> Result<Expr, ConstraintParseError> {
        let end = self.text.len();
        match self.next() {
            Some((_, Tok::Int(v))) => Ok(Expr::Lit(v)),
            Some((_, Tok::Name(name))) => {
                if self.peek() != Some(&Tok::LBracket) {
                    return Ok(Expr::Axis(name));
                }
                self.pos += 1;
                let negative = if self.peek() == Some(&Tok::Minus) {
                    self.pos += 1;
                    true
                } else {
                    false
                };
                let index = match self.next() {
                    Some((_, Tok::Int(v))) => {
                        if negative {
                            -v
                        } else {
                            v
                        }
                    }
                    Some((at, t)) => return Err(self.error(at, format!("expected integer index, found {t:?}"))),
                    None => return Err(self.error(end, "expected integer index".into())),
                };
                match self.next() {
                    Some((_, Tok::RBracket)) => {}
                    Some((at, t)) => return Err(self.error(at, format!("expected `]`, found {t:?}"))),
                    None => return Err(self.error(end, "expected `]`".into())),
                }
                if self.peek() == Some(&Tok::Item) {
                    self.pos += 1;
                }
                Ok(Expr::Index { tensor: name, index })
            }
            Some((at, t)) => Err(self.error(at, format!("expected operand, found {t:?}"))),
            None => Err(self.error(end, "expected operand".into())),
        }
    }
}
