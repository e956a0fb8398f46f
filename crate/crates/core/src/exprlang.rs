//! Scalar expression language.
//!
//! Grammar (whitespace-insensitive, no implicit multiplication):
//!
//! ```text
//! expr     := term (("+" | "-") term)*
//! term     := unary (("*" | "/") unary)*
//! unary    := "-" unary | power
//! power    := atom ("^" exponent)?
//! exponent := "-" exponent | power
//! atom     := number | "pi" | ident | func "(" expr ")" | "(" expr ")"
//! func     := exp | ln | sin | cos | tan | abs | sign | sqrt
//! ```
//!
//! `^` binds tighter than unary minus (`-t^2` is `-(t^2)`) and is
//! right-associative. Number literals are kept as exact rationals.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::jets::{Jet, JetError};
use crate::scalar::Scalar;

/// Byte range into the parsed source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        SourceSpan { start, end }
    }

    fn join(self, other: SourceSpan) -> SourceSpan {
        SourceSpan::new(self.start.min(other.start), self.end.max(other.end))
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Numeric literal. `exact` is `None` when the value does not fit a
/// rational of sane size (huge exponents) or is irrational (`pi`).
#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub exact: Option<BigRational>,
    pub approx: f64,
}

impl Literal {
    pub fn rational(r: BigRational) -> Self {
        let approx = ToPrimitive::to_f64(&r).unwrap_or(f64::NAN);
        Literal { exact: Some(r), approx }
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn float(v: f64) -> Self {
        Literal { exact: None, approx: v }
    }

    pub fn is_zero(&self) -> bool {
        match &self.exact {
            Some(r) => Zero::is_zero(r),
            None => self.approx == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match &self.exact {
            Some(r) => r.is_one(),
            None => self.approx == 1.0,
        }
    }

    fn is_negative(&self) -> bool {
        match &self.exact {
            Some(r) => r.is_negative(),
            None => self.approx < 0.0,
        }
    }

    fn combine(&self, other: &Literal, op: BinOp) -> Option<Literal> {
        let (a, b) = (self.exact.as_ref()?, other.exact.as_ref()?);
        let r = match op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if Zero::is_zero(b) {
                    return None;
                }
                a / b
            }
            BinOp::Pow => {
                let n = b.to_integer().to_i64().filter(|_| b.is_integer())?;
                if n.abs() > 64 || (n < 0 && Zero::is_zero(a)) {
                    return None;
                }
                crate::scalar::rational_powi(a, n)
            }
        };
        Some(Literal::rational(r))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.exact {
            Some(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Some(r) => match terminating_decimal(r) {
                Some(d) => write!(f, "{d}"),
                None => write!(f, "{}/{}", r.numer(), r.denom()),
            },
            None if self.approx == std::f64::consts::PI => write!(f, "pi"),
            None => write!(f, "{:?}", self.approx),
        }
    }
}

/// Decimal string for rationals whose denominator is `2^a 5^b`.
fn terminating_decimal(r: &BigRational) -> Option<String> {
    let mut d = r.denom().clone();
    let (two, five) = (BigInt::from(2), BigInt::from(5));
    let mut digits = 0usize;
    let mut scale = BigInt::one();
    while (&d % &two).is_zero() || (&d % &five).is_zero() {
        if (&d % &two).is_zero() {
            d /= &two;
        } else {
            d /= &five;
        }
        digits += 1;
        scale *= 10;
    }
    if !d.is_one() || digits > 30 {
        return None;
    }
    let scaled = r * BigRational::from_integer(scale);
    let n = scaled.to_integer();
    let sign = if n.is_negative() { "-" } else { "" };
    let text = format!("{:0>width$}", n.abs().to_string(), width = digits + 1);
    let (int, frac) = text.split_at(text.len() - digits);
    Some(format!("{sign}{int}.{frac}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Tan,
    Abs,
    Sign,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 8] =
        [Func::Exp, Func::Ln, Func::Sin, Func::Cos, Func::Tan, Func::Abs, Func::Sign, Func::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(Literal),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Expression tree node. `span` is set for nodes that came from source text.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Option<SourceSpan>,
}

/// Structural equality; spans are ignored.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at {span}: expected {expected}, found {found}")]
    Syntax { span: SourceSpan, expected: String, found: String },
    #[error("unknown identifier '{name}' at {span}; known: {}", known.join(", "))]
    UnknownIdentifier { name: String, span: SourceSpan, known: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{func} undefined at value {value} in '{subexpr}'{}", fmt_span(span))]
    Domain { func: &'static str, value: f64, subexpr: String, span: Option<SourceSpan> },
    #[error("division by zero in '{subexpr}'{}", fmt_span(span))]
    ZeroDivision { subexpr: String, span: Option<SourceSpan> },
    #[error("no exact value for {func} in '{subexpr}'{}", fmt_span(span))]
    NotExact { func: &'static str, subexpr: String, span: Option<SourceSpan> },
    #[error("unbound variable '{0}'")]
    Unbound(String),
    #[error("environment entry '{name}' has shape ({nvars} vars, order {order}), expected ({want_nvars}, {want_order})")]
    OrderMismatch { name: String, nvars: usize, order: usize, want_nvars: usize, want_order: usize },
    #[error("jet error: {0}")]
    Jet(JetError),
}

fn fmt_span(span: &Option<SourceSpan>) -> String {
    span.map(|s| format!(" at {s}")).unwrap_or_default()
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Literal),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(l) => format!("number {l}"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

const MAX_EXACT_EXPONENT: i64 = 400;

fn lex(src: &str) -> Result<Vec<(Tok, SourceSpan)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let (lit, end) = lex_number(src, i)?;
            out.push((Tok::Num(lit), SourceSpan::new(start, end)));
            i = end;
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), SourceSpan::new(start, i)));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    let ch = src[i..].chars().next().unwrap();
                    return Err(ParseError::Syntax {
                        span: SourceSpan::new(i, i + ch.len_utf8()),
                        expected: "number, identifier, operator or parenthesis".into(),
                        found: format!("'{ch}'"),
                    });
                }
            };
            i += 1;
            out.push((tok, SourceSpan::new(start, i)));
        }
    }
    out.push((Tok::End, SourceSpan::new(src.len(), src.len())));
    Ok(out)
}

fn lex_number(src: &str, start: usize) -> Result<(Literal, usize), ParseError> {
    let bytes = src.as_bytes();
    let mut i = start;
    let mut digits = String::new();
    let mut frac_len: i64 = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        digits.push(bytes[i] as char);
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            digits.push(bytes[i] as char);
            frac_len += 1;
            i += 1;
        }
    }
    let mut exp: i64 = 0;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        let neg = match bytes.get(j) {
            Some(b'-') => {
                j += 1;
                true
            }
            Some(b'+') => {
                j += 1;
                false
            }
            _ => false,
        };
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j == exp_start {
            return Err(ParseError::Syntax {
                span: SourceSpan::new(start, j),
                expected: "digits after exponent marker".into(),
                found: src[start..j].to_string(),
            });
        }
        exp = src[exp_start..j].parse::<i64>().unwrap_or(i64::MAX);
        if neg {
            exp = -exp;
        }
        i = j;
    }
    let text = &src[start..i];
    let approx: f64 = text.parse().unwrap_or(f64::INFINITY);
    let scale = exp.saturating_sub(frac_len);
    let exact = if scale.abs() <= MAX_EXACT_EXPONENT {
        let mantissa: BigInt = digits.parse().unwrap_or_default();
        let ten = BigRational::from_integer(BigInt::from(10));
        Some(BigRational::from_integer(mantissa) * crate::scalar::rational_powi(&ten, scale))
    } else {
        None
    };
    Ok((Literal { exact, approx }, i))
}

// ---------------------------------------------------------------- parser

struct Parser<'a> {
    toks: Vec<(Tok, SourceSpan)>,
    pos: usize,
    vars: Option<&'a [&'a str]>,
}

/// Parses an expression; any identifier that is not a function name or
/// `pi` becomes a variable.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    parse_impl(source, None)
}

/// Parses an expression whose variables must come from `vars`.
pub fn parse_with_vars(source: &str, vars: &[&str]) -> Result<Expr, ParseError> {
    parse_impl(source, Some(vars))
}

fn parse_impl(source: &str, vars: Option<&[&str]>) -> Result<Expr, ParseError> {
    if source.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser { toks: lex(source)?, pos: 0, vars };
    let e = p.expr()?;
    let (tok, span) = p.peek();
    if *tok != Tok::End {
        return Err(ParseError::Syntax {
            span: *span,
            expected: "operator or end of input".into(),
            found: tok.describe(),
        });
    }
    Ok(e)
}

impl Parser<'_> {
    fn peek(&self) -> &(Tok, SourceSpan) {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, SourceSpan) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<SourceSpan, ParseError> {
        let (tok, span) = self.bump();
        if tok == want {
            Ok(span)
        } else {
            Err(ParseError::Syntax { span, expected: what.into(), found: tok.describe() })
        }
    }

    fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        let span = match (l.span, r.span) {
            (Some(a), Some(b)) => Some(a.join(b)),
            (a, b) => a.or(b),
        };
        Expr { kind: ExprKind::Binary(op, Box::new(l), Box::new(r)), span }
    }

    /// Negated literals fold into the literal itself.
    fn negate(op_span: SourceSpan, inner: Expr) -> Expr {
        let span = inner.span.map(|s| op_span.join(s));
        if let ExprKind::Const(_) = inner.kind {
            return Expr { span, ..-inner };
        }
        Expr { kind: ExprKind::Neg(Box::new(inner)), span }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Self::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Self::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().0 == Tok::Op('-') {
            let (_, span) = self.bump();
            let inner = self.unary()?;
            return Ok(Self::negate(span, inner));
        }
        self.power()
    }

    fn exponent(&mut self) -> Result<Expr, ParseError> {
        if self.peek().0 == Tok::Op('-') {
            let (_, span) = self.bump();
            let inner = self.exponent()?;
            return Ok(Self::negate(span, inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek().0 == Tok::Op('^') {
            self.bump();
            let exp = self.exponent()?;
            return Ok(Self::binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn known_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Func::ALL.iter().map(|f| format!("{}()", f.name())).collect();
        names.push("pi".into());
        if let Some(vars) = self.vars {
            names.extend(vars.iter().map(|v| v.to_string()));
        }
        names
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, span) = self.bump();
        match tok {
            Tok::Num(lit) => Ok(Expr { kind: ExprKind::Const(lit), span: Some(span) }),
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "')'")?;
                Ok(Expr { kind: inner.kind, span: Some(span.join(close)) })
            }
            Tok::Ident(name) => {
                if self.peek().0 == Tok::LParen {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ParseError::UnknownIdentifier {
                            name,
                            span,
                            known: self.known_names(),
                        });
                    };
                    self.bump();
                    let arg = self.expr()?;
                    let close = self.expect(Tok::RParen, "')' closing function call")?;
                    return Ok(Expr {
                        kind: ExprKind::Call(func, Box::new(arg)),
                        span: Some(span.join(close)),
                    });
                }
                if Func::from_name(&name).is_some() {
                    let (found, fspan) = self.peek().clone();
                    return Err(ParseError::Syntax {
                        span: fspan,
                        expected: format!("'(' after function {name}"),
                        found: found.describe(),
                    });
                }
                if name == "pi" {
                    return Ok(Expr {
                        kind: ExprKind::Const(Literal::float(std::f64::consts::PI)),
                        span: Some(span),
                    });
                }
                if let Some(vars) = self.vars {
                    if !vars.contains(&name.as_str()) {
                        return Err(ParseError::UnknownIdentifier {
                            name,
                            span,
                            known: self.known_names(),
                        });
                    }
                }
                Ok(Expr { kind: ExprKind::Var(name), span: Some(span) })
            }
            other => Err(ParseError::Syntax {
                span,
                expected: "number, identifier or '('".into(),
                found: other.describe(),
            }),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

// ---------------------------------------------------------------- builders

impl Expr {
    fn node(kind: ExprKind) -> Expr {
        Expr { kind, span: None }
    }

    pub fn lit(l: Literal) -> Expr {
        Self::node(ExprKind::Const(l))
    }

    pub fn int(n: i64) -> Expr {
        Self::lit(Literal::integer(n))
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Self::lit(Literal::rational(BigRational::new(n.into(), d.into())))
    }

    pub fn float(v: f64) -> Expr {
        match BigRational::from_float(v) {
            Some(r) if v.fract() == 0.0 => Self::lit(Literal::rational(r)),
            _ => Self::lit(Literal::float(v)),
        }
    }

    pub fn var(name: &str) -> Expr {
        Self::node(ExprKind::Var(name.to_string()))
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Self::node(ExprKind::Call(f, Box::new(arg)))
    }

    pub fn exp(self) -> Expr {
        Self::call(Func::Exp, self)
    }

    pub fn ln(self) -> Expr {
        Self::call(Func::Ln, self)
    }

    pub fn sqrt(self) -> Expr {
        Self::call(Func::Sqrt, self)
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match &self.kind {
            ExprKind::Const(l) => Some(l),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_literal().is_some_and(Literal::is_zero)
    }

    fn is_one(&self) -> bool {
        self.as_literal().is_some_and(Literal::is_one)
    }

    /// Binary node with light constant folding (`0 + e`, `1 * e`, literal arithmetic).
    pub fn binop(op: BinOp, l: Expr, r: Expr) -> Expr {
        if let (Some(a), Some(b)) = (l.as_literal(), r.as_literal()) {
            if let Some(c) = a.combine(b, op) {
                return Self::lit(c);
            }
        }
        match op {
            BinOp::Add if l.is_zero() => return r,
            BinOp::Add | BinOp::Sub if r.is_zero() => return l,
            BinOp::Sub if l.is_zero() => return -r,
            BinOp::Mul if l.is_zero() || r.is_zero() => return Self::int(0),
            BinOp::Mul if l.is_one() => return r,
            BinOp::Mul | BinOp::Div if r.is_one() => return l,
            BinOp::Div if l.is_zero() => return Self::int(0),
            BinOp::Pow if r.is_zero() => return Self::int(1),
            BinOp::Pow if r.is_one() => return l,
            _ => {}
        }
        Self::node(ExprKind::Binary(op, Box::new(l), Box::new(r)))
    }

    pub fn pow(self, e: Expr) -> Expr {
        Self::binop(BinOp::Pow, self, e)
    }

    pub fn powi(self, n: i64) -> Expr {
        self.pow(Expr::int(n))
    }

    /// Free variables, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match &self.kind {
            ExprKind::Const(_) => {}
            ExprKind::Var(v) => {
                out.insert(v.clone());
            }
            ExprKind::Neg(a) | ExprKind::Call(_, a) => a.collect_vars(out),
            ExprKind::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on(&self, var: &str) -> bool {
        match &self.kind {
            ExprKind::Const(_) => false,
            ExprKind::Var(v) => v == var,
            ExprKind::Neg(a) | ExprKind::Call(_, a) => a.depends_on(var),
            ExprKind::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// Replaces every occurrence of `var` by `with`.
    pub fn substitute(&self, var: &str, with: &Expr) -> Expr {
        let mut map = HashMap::new();
        map.insert(var.to_string(), with.clone());
        self.substitute_all(&map)
    }

    /// Simultaneous substitution.
    pub fn substitute_all(&self, map: &HashMap<String, Expr>) -> Expr {
        let kind = match &self.kind {
            ExprKind::Const(_) => return self.clone(),
            ExprKind::Var(v) => return map.get(v).cloned().unwrap_or_else(|| self.clone()),
            ExprKind::Neg(a) => ExprKind::Neg(Box::new(a.substitute_all(map))),
            ExprKind::Call(f, a) => ExprKind::Call(*f, Box::new(a.substitute_all(map))),
            ExprKind::Binary(op, a, b) => {
                ExprKind::Binary(*op, Box::new(a.substitute_all(map)), Box::new(b.substitute_all(map)))
            }
        };
        Expr { kind, span: self.span }
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, var: &str) -> Expr {
        if !self.depends_on(var) {
            return Expr::int(0);
        }
        match &self.kind {
            ExprKind::Const(_) => Expr::int(0),
            ExprKind::Var(_) => Expr::int(1),
            ExprKind::Neg(a) => -a.diff(var),
            ExprKind::Binary(op, a, b) => {
                let (a, b) = (a.as_ref(), b.as_ref());
                match op {
                    BinOp::Add => a.diff(var) + b.diff(var),
                    BinOp::Sub => a.diff(var) - b.diff(var),
                    BinOp::Mul => a.diff(var) * b.clone() + a.clone() * b.diff(var),
                    BinOp::Div => {
                        (a.diff(var) * b.clone() - a.clone() * b.diff(var)) / b.clone().powi(2)
                    }
                    BinOp::Pow if !b.depends_on(var) => {
                        let lowered = b.clone() - Expr::int(1);
                        b.clone() * a.clone().pow(lowered) * a.diff(var)
                    }
                    BinOp::Pow => {
                        self.clone()
                            * (b.diff(var) * a.clone().ln() + b.clone() * a.diff(var) / a.clone())
                    }
                }
            }
            ExprKind::Call(f, a) => {
                let inner = a.diff(var);
                let a = a.as_ref().clone();
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Ln => Expr::int(1) / a,
                    Func::Sin => Expr::call(Func::Cos, a),
                    Func::Cos => -Expr::call(Func::Sin, a),
                    Func::Tan => Expr::int(1) + Expr::call(Func::Tan, a).powi(2),
                    Func::Abs => Expr::call(Func::Sign, a),
                    Func::Sign => Expr::int(0),
                    Func::Sqrt => Expr::int(1) / (Expr::int(2) * self.clone()),
                };
                outer * inner
            }
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binop(BinOp::Add, self, rhs)
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binop(BinOp::Sub, self, rhs)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binop(BinOp::Mul, self, rhs)
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binop(BinOp::Div, self, rhs)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match &self.kind {
            ExprKind::Const(l) => {
                if let Some(r) = &l.exact {
                    return Expr::lit(Literal::rational(-r));
                }
                Expr::lit(Literal::float(-l.approx))
            }
            ExprKind::Neg(inner) => inner.as_ref().clone(),
            _ => Expr::node(ExprKind::Neg(Box::new(self))),
        }
    }
}

// ---------------------------------------------------------------- display

const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Const(l) if l.is_negative() => PREC_NEG,
            ExprKind::Const(Literal { exact: Some(r), .. })
                if !r.is_integer() && terminating_decimal(r).is_none() =>
            {
                2
            }
            ExprKind::Const(_) | ExprKind::Var(_) | ExprKind::Call(..) => PREC_ATOM,
            ExprKind::Neg(_) => PREC_NEG,
            ExprKind::Binary(op, ..) => op.precedence(),
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, paren: bool) -> fmt::Result {
        if paren {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints a form that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Const(l) => {
                write!(f, "{l}")
            }
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Call(func, a) => write!(f, "{}({a})", func.name()),
            ExprKind::Neg(a) => {
                write!(f, "-")?;
                a.fmt_child(f, a.precedence() < PREC_NEG || a.precedence() == PREC_NEG && a.as_literal().is_some())
            }
            ExprKind::Binary(op, a, b) => {
                let p = op.precedence();
                if *op == BinOp::Pow {
                    a.fmt_child(f, a.precedence() <= p)?;
                    write!(f, "^")?;
                    b.fmt_child(f, b.precedence() < p)
                } else {
                    a.fmt_child(f, a.precedence() < p)?;
                    write!(f, "{}", op.symbol())?;
                    b.fmt_child(f, b.precedence() <= p)
                }
            }
        }
    }
}

// ---------------------------------------------------------------- evaluation

/// Variable bindings for jet evaluation. All entries share one shape and base point.
#[derive(Debug, Clone)]
pub struct JetEnv<S: Scalar> {
    nvars: usize,
    order: usize,
    base: Vec<S>,
    bindings: BTreeMap<String, Jet<S>>,
}

impl<S: Scalar> JetEnv<S> {
    /// Binds each name to the corresponding coordinate function at `base`.
    pub fn coordinates(names: &[&str], base: &[S], order: usize) -> Self {
        assert_eq!(names.len(), base.len(), "one base value per coordinate");
        let nvars = names.len();
        let bindings = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), Jet::variable(nvars, order, base, i)))
            .collect();
        JetEnv { nvars, order, base: base.to_vec(), bindings }
    }

    /// An environment with a given shape and no bindings yet.
    pub fn empty(base: &[S], order: usize) -> Self {
        JetEnv { nvars: base.len(), order, base: base.to_vec(), bindings: BTreeMap::new() }
    }

    pub fn bind(&mut self, name: &str, jet: Jet<S>) -> Result<(), EvalError> {
        if jet.nvars() != self.nvars || jet.order() != self.order {
            return Err(EvalError::OrderMismatch {
                name: name.to_string(),
                nvars: jet.nvars(),
                order: jet.order(),
                want_nvars: self.nvars,
                want_order: self.order,
            });
        }
        self.bindings.insert(name.to_string(), jet);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Jet<S>> {
        self.bindings.get(name)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn base(&self) -> &[S] {
        &self.base
    }

    pub fn truncate(&self, order: usize) -> Self {
        JetEnv {
            nvars: self.nvars,
            order,
            base: self.base.clone(),
            bindings: self.bindings.iter().map(|(k, j)| (k.clone(), j.truncate(order))).collect(),
        }
    }

    fn constant(&self, v: S) -> Jet<S> {
        Jet::constant(self.nvars, self.order, &self.base, v)
    }
}

impl Expr {
    fn lift(&self, e: JetError) -> EvalError {
        let subexpr = self.to_string();
        match e {
            JetError::Domain { func, value } => EvalError::Domain { func, value, subexpr, span: self.span },
            JetError::ZeroDivision => EvalError::ZeroDivision { subexpr, span: self.span },
            JetError::NotExact { func, .. } => EvalError::NotExact { func, subexpr, span: self.span },
            other => EvalError::Jet(other),
        }
    }

    /// Taylor expansion of the expression at the environment's base point,
    /// truncated at the environment's order.
    pub fn eval_jet<S: Scalar>(&self, env: &JetEnv<S>) -> Result<Jet<S>, EvalError> {
        match &self.kind {
            ExprKind::Const(l) => {
                let v = S::from_literal(l).ok_or_else(|| EvalError::NotExact {
                    func: "literal",
                    subexpr: self.to_string(),
                    span: self.span,
                })?;
                Ok(env.constant(v))
            }
            ExprKind::Var(v) => env.get(v).cloned().ok_or_else(|| EvalError::Unbound(v.clone())),
            ExprKind::Neg(a) => Ok(-&a.eval_jet(env)?),
            ExprKind::Binary(op, a, b) => {
                let x = a.eval_jet(env)?;
                if *op == BinOp::Pow {
                    return self.eval_pow(&x, b, env);
                }
                let y = b.eval_jet(env)?;
                let r = match op {
                    BinOp::Add => x.try_add(&y),
                    BinOp::Sub => x.try_sub(&y),
                    BinOp::Mul => x.try_mul(&y),
                    BinOp::Div => x.try_div(&y),
                    BinOp::Pow => unreachable!(),
                };
                r.map_err(|e| self.lift(e))
            }
            ExprKind::Call(func, a) => {
                let x = a.eval_jet(env)?;
                let r = match func {
                    Func::Exp => x.exp(),
                    Func::Ln => x.ln(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Sqrt => x.sqrt(),
                    Func::Abs | Func::Sign => {
                        let s = x.value().sign();
                        if s == 0 {
                            Err(JetError::Domain { func: func.name(), value: 0.0 })
                        } else if *func == Func::Abs {
                            Ok(if s > 0 { x } else { -&x })
                        } else {
                            Ok(x.constant_like(S::from_i64(s as i64)))
                        }
                    }
                };
                r.map_err(|e| self.lift(e))
            }
        }
    }

    fn eval_pow<S: Scalar>(&self, base: &Jet<S>, exponent: &Expr, env: &JetEnv<S>) -> Result<Jet<S>, EvalError> {
        let e = exponent.eval_jet(env)?;
        let r = if e.is_constant() {
            base.pow(e.value())
        } else {
            base.ln().and_then(|l| (&l * &e).exp())
        };
        r.map_err(|err| self.lift(err))
    }

    /// Plain floating-point evaluation.
    pub fn eval_f64(&self, env: &HashMap<&str, f64>) -> Result<f64, EvalError> {
        let domain = |func: &'static str, value: f64| EvalError::Domain {
            func,
            value,
            subexpr: self.to_string(),
            span: self.span,
        };
        Ok(match &self.kind {
            ExprKind::Const(l) => l.approx,
            ExprKind::Var(v) => *env.get(v.as_str()).ok_or_else(|| EvalError::Unbound(v.clone()))?,
            ExprKind::Neg(a) => -a.eval_f64(env)?,
            ExprKind::Binary(op, a, b) => {
                let (x, y) = (a.eval_f64(env)?, b.eval_f64(env)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::ZeroDivision { subexpr: self.to_string(), span: self.span });
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if y.fract() == 0.0 {
                            if x == 0.0 && y < 0.0 {
                                return Err(EvalError::ZeroDivision { subexpr: self.to_string(), span: self.span });
                            }
                            x.powf(y)
                        } else if x > 0.0 {
                            x.powf(y)
                        } else {
                            return Err(domain("pow", x));
                        }
                    }
                }
            }
            ExprKind::Call(func, a) => {
                let x = a.eval_f64(env)?;
                match func {
                    Func::Exp => x.exp(),
                    Func::Ln if x > 0.0 => x.ln(),
                    Func::Sqrt if x > 0.0 => x.sqrt(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan if x.cos().abs() > 1e-15 => x.tan(),
                    Func::Abs if x != 0.0 => x.abs(),
                    Func::Sign if x != 0.0 => x.signum(),
                    _ => return Err(domain(func.name(), x)),
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use approx::assert_relative_eq;

    fn q(n: i64, d: i64) -> Exact {
        BigRational::new(n.into(), d.into())
    }

    fn env1(at: f64, order: usize) -> JetEnv<f64> {
        JetEnv::coordinates(&["t"], &[at], order)
    }

    #[test]
    fn shapes_from_precedence() {
        let e = parse("t^3+t").unwrap();
        let expect = Expr::node(ExprKind::Binary(
            BinOp::Add,
            Box::new(Expr::node(ExprKind::Binary(BinOp::Pow, Box::new(Expr::var("t")), Box::new(Expr::int(3))))),
            Box::new(Expr::var("t")),
        ));
        assert_eq!(e, expect);
        assert_eq!(parse("exp(t)").unwrap(), Expr::call(Func::Exp, Expr::var("t")));
        // unary minus binds looser than ^
        assert_eq!(parse("-t^2").unwrap(), Expr::node(ExprKind::Neg(Box::new(parse("t^2").unwrap()))));
        // right associative, signed exponent
        assert_eq!(parse("2^3^2").unwrap(), parse("2^(3^2)").unwrap());
        assert_eq!(parse("t^-1").unwrap(), parse("t^(-1)").unwrap());
        assert_eq!(parse("a - b - c").unwrap(), parse("(a-b)-c").unwrap());
    }

    #[test]
    fn juxtaposition_is_rejected() {
        let err = parse("2dv du").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }), "{err}");
        let err = parse("2 t").unwrap_err();
        match err {
            ParseError::Syntax { span, .. } => assert_eq!(span, SourceSpan::new(2, 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_identifiers() {
        let err = parse("foo(t)").unwrap_err();
        match &err {
            ParseError::UnknownIdentifier { name, known, .. } => {
                assert_eq!(name, "foo");
                assert!(known.iter().any(|k| k == "exp()"));
            }
            other => panic!("{other}"),
        }
        let err = parse_with_vars("x + y", &["x"]).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { ref name, .. } if name == "y"));
        assert!(matches!(parse("exp + 1"), Err(ParseError::Syntax { .. })));
        assert_eq!(parse("  "), Err(ParseError::Empty));
    }

    #[test]
    fn literals_are_exact() {
        let e = parse("0.25").unwrap();
        assert_eq!(e.as_literal().unwrap().exact, Some(q(1, 4)));
        let e = parse("1.5e2").unwrap();
        assert_eq!(e.as_literal().unwrap().exact, Some(q(150, 1)));
        let e = parse("1e999").unwrap();
        assert_eq!(e.as_literal().unwrap().exact, None);
    }

    #[test]
    fn exp_series() {
        let j = parse("exp(t)").unwrap().eval_jet(&env1(0.0, 2)).unwrap();
        assert_eq!(j.coeffs(), &[1.0, 1.0, 0.5]);
    }

    #[test]
    fn cubic_jet_exact() {
        let env = JetEnv::coordinates(&["t"], &[q(1, 1)], 3);
        let j = parse("t^3+t").unwrap().eval_jet(&env).unwrap();
        assert_eq!(j.coeffs(), &[q(2, 1), q(4, 1), q(3, 1), q(1, 1)]);
        assert_eq!(j.derivatives(), vec![q(2, 1), q(4, 1), q(6, 1), q(6, 1)]);
    }

    #[test]
    fn domain_errors_carry_spans() {
        let err = parse("1 + ln(t)").unwrap().eval_jet(&env1(0.0, 1)).unwrap_err();
        match err {
            EvalError::Domain { func, span, subexpr, .. } => {
                assert_eq!(func, "ln");
                assert_eq!(span, Some(SourceSpan::new(4, 9)));
                assert_eq!(subexpr, "ln(t)");
            }
            other => panic!("{other}"),
        }
        assert!(parse("abs(t)").unwrap().eval_jet(&env1(0.0, 1)).is_err());
        assert!(parse("1/(t-1)").unwrap().eval_jet(&env1(1.0, 1)).is_err());
        assert!(matches!(parse("y").unwrap().eval_jet(&env1(1.0, 1)), Err(EvalError::Unbound(_))));
    }

    #[test]
    fn abs_and_sign_follow_branch() {
        let j = parse("abs(t)^3").unwrap().eval_jet(&env1(-2.0, 2)).unwrap();
        assert_relative_eq!(*j.value(), 8.0);
        assert_relative_eq!(j.partial(&[1]), -12.0);
        let s = parse("sign(t)").unwrap().eval_jet(&env1(-2.0, 2)).unwrap();
        assert_eq!(s.coeffs(), &[-1.0, 0.0, 0.0]);
    }

    #[test]
    fn variable_exponent() {
        // t^t at 1: derivative 1
        let j = parse("t^t").unwrap().eval_jet(&env1(1.0, 2)).unwrap();
        assert_relative_eq!(j.partial(&[1]), 1.0, epsilon = 1e-14);
        assert_relative_eq!(j.partial(&[2]), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn env_shape_mismatch() {
        let mut env = env1(0.0, 2);
        let err = env.bind("s", Jet::variable(1, 3, &[0.0], 0)).unwrap_err();
        assert!(matches!(err, EvalError::OrderMismatch { .. }));
    }

    #[test]
    fn display_round_trips() {
        for src in [
            "t^3+t",
            "-t^2",
            "(-t)^2",
            "t^-1",
            "2^3^2",
            "(2^3)^2",
            "a-(b-c)",
            "a/(b*c)",
            "-(a+b)*c",
            "tan(3/2*ln(t))",
            "exp(-u)*x",
            "--t",
            "pi*t",
            "0.5*t",
        ] {
            let e = parse(src).unwrap();
            let again = parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
        let neg = -Expr::int(3) * Expr::var("t");
        assert_eq!(parse(&neg.to_string()).unwrap(), neg);
    }

    #[test]
    fn symbolic_derivative_matches_jets() {
        let e = parse("x^2*exp(u) - ln(u+x)/u + sqrt(x*u) + tan(x)*abs(u)").unwrap();
        let env = JetEnv::coordinates(&["x", "u"], &[0.3, 1.2], 3);
        let j = e.eval_jet(&env).unwrap();
        let dx = e.diff("x").eval_jet(&env).unwrap();
        let du = e.diff("u").eval_jet(&env).unwrap();
        assert_relative_eq!(*dx.value(), j.partial(&[1, 0]), epsilon = 1e-12);
        assert_relative_eq!(*du.value(), j.partial(&[0, 1]), epsilon = 1e-12);
        assert_relative_eq!(dx.partial(&[0, 1]), j.partial(&[1, 1]), epsilon = 1e-12);
        let e2 = parse("x^u").unwrap();
        let d = e2.diff("u").eval_jet(&env).unwrap();
        assert_relative_eq!(*d.value(), 0.3f64.powf(1.2) * 0.3f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn substitution() {
        let e = parse("ln(u + x)").unwrap().substitute("x", &parse("x3").unwrap());
        assert_eq!(e, parse("ln(u+x3)").unwrap());
        assert_eq!(e.variables().into_iter().collect::<Vec<_>>(), vec!["u", "x3"]);
    }

    #[test]
    fn float_eval_agrees() {
        let e = parse("t^3 + sin(t)/t - 2^-t").unwrap();
        let env: HashMap<&str, f64> = [("t", 0.7)].into_iter().collect();
        let j = e.eval_jet(&env1(0.7, 0)).unwrap();
        assert_relative_eq!(e.eval_f64(&env).unwrap(), *j.value(), epsilon = 1e-15);
    }
}
