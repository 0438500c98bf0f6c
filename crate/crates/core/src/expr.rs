//! A small arithmetic expression language for user-supplied kernels,
//! potentials and nonlinearities.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?              right associative
//! atom    := number | ident | ident '(' args ')' | '(' expr ')' | '|' expr '|'
//! ```
//!
//! Variables are `t`, `s` and the spatial coordinates `x1 .. xN` (`x` alone is
//! `x1`). Constants `pi` and `e` are predefined. Functions: `abs`, `sign`,
//! `log` (alias `ln`), `exp`, `sin`, `cos`, `sqrt`, `clamp(a, lo, hi)`,
//! `inside(a, lo, hi)` (1 on the open interval, 0 elsewhere) and the periodic
//! weights `sum_cos2(x, n)` = Σ cos²(π xᵢ), `sum_sin2(x, n)` = Σ sin²(π xᵢ).
//! The bounds of `clamp` and `inside` must be constant.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable `{0}` is not declared for this expression")]
    Undeclared(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("{op} domain error at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    S,
    /// Zero-based spatial coordinate index (`x1` is `X(0)`).
    X(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::S => write!(f, "s"),
            Var::X(i) => write!(f, "x{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sign,
    Log,
    Exp,
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Clamp(Box<Expr>, f64, f64),
    Inside(Box<Expr>, f64, f64),
    SumCos2(usize),
    SumSin2(usize),
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub x: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn ts(t: f64, s: f64, x: &'a [f64]) -> Self {
        Env { t: Some(t), s: Some(s), x }
    }

    pub fn t(t: f64) -> Self {
        Env { t: Some(t), s: None, x: &[] }
    }
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arity {
    pub t: bool,
    pub s: bool,
    pub x_dim: usize,
}

impl Arity {
    pub const T: Arity = Arity { t: true, s: false, x_dim: 0 };

    pub fn new(t: bool, s: bool, x_dim: usize) -> Self {
        Arity { t, s, x_dim }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Bar,
    Comma,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
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
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '|' => Tok::Bar,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            other => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(ExprError::Syntax { pos: self.at(), msg: format!("expected {what}") })
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<(Expr, usize)>, ExprError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            let at = self.at();
            args.push((self.expr()?, at));
            match self.bump() {
                Tok::Comma => continue,
                Tok::RParen => return Ok(args),
                _ => {
                    return Err(ExprError::Syntax {
                        pos: self.toks[self.pos.saturating_sub(1)].1,
                        msg: "expected `,` or `)`".into(),
                    })
                }
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let at = self.at();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Bar => {
                let e = self.expr()?;
                self.expect(Tok::Bar, "closing `|`")?;
                Ok(Expr::Unary(UnaryOp::Abs, Box::new(e)))
            }
            Tok::Ident(name) => self.ident(name, at),
            Tok::End => Err(ExprError::Syntax { pos: at, msg: "unexpected end of input".into() }),
            other => Err(ExprError::Syntax { pos: at, msg: format!("unexpected token {other:?}") }),
        }
    }

    fn ident(&mut self, name: String, at: usize) -> Result<Expr, ExprError> {
        let unary = match name.as_str() {
            "abs" => Some(UnaryOp::Abs),
            "sign" => Some(UnaryOp::Sign),
            "log" | "ln" => Some(UnaryOp::Log),
            "exp" => Some(UnaryOp::Exp),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "sqrt" => Some(UnaryOp::Sqrt),
            _ => None,
        };
        if let Some(op) = unary {
            let mut args = self.args()?;
            if args.len() != 1 {
                return Err(ExprError::Syntax { pos: at, msg: format!("`{name}` takes one argument") });
            }
            return Ok(Expr::Unary(op, Box::new(args.remove(0).0)));
        }
        match name.as_str() {
            "t" => Ok(Expr::Var(Var::T)),
            "s" => Ok(Expr::Var(Var::S)),
            "x" => Ok(Expr::Var(Var::X(0))),
            "pi" => Ok(Expr::Const(PI)),
            "e" => Ok(Expr::Const(std::f64::consts::E)),
            "clamp" | "inside" => {
                let args = self.args()?;
                if args.len() != 3 {
                    return Err(ExprError::Syntax { pos: at, msg: format!("`{name}` takes three arguments") });
                }
                let mut it = args.into_iter();
                let (a, _) = it.next().unwrap();
                let lo = constant_arg(it.next().unwrap())?;
                let hi = constant_arg(it.next().unwrap())?;
                Ok(if name == "clamp" {
                    Expr::Clamp(Box::new(a), lo, hi)
                } else {
                    Expr::Inside(Box::new(a), lo, hi)
                })
            }
            "sum_cos2" | "sum_sin2" => {
                let args = self.args()?;
                if args.len() != 2 || args[0].0 != Expr::Var(Var::X(0)) {
                    return Err(ExprError::Syntax { pos: at, msg: format!("`{name}` expects (x, n)") });
                }
                let n = constant_arg(args[1].clone())?;
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(ExprError::Syntax { pos: args[1].1, msg: "dimension must be a positive integer".into() });
                }
                Ok(if name == "sum_cos2" { Expr::SumCos2(n as usize) } else { Expr::SumSin2(n as usize) })
            }
            other => {
                if let Some(idx) = other.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if idx >= 1 {
                        return Ok(Expr::Var(Var::X(idx - 1)));
                    }
                }
                Err(ExprError::UnknownIdentifier { name: other.to_string(), pos: at })
            }
        }
    }
}

fn constant_arg((e, pos): (Expr, usize)) -> Result<f64, ExprError> {
    match e {
        Expr::Const(c) => Ok(c),
        _ => Err(ExprError::Syntax { pos, msg: "argument must be a numeric constant".into() }),
    }
}

/// Parse an expression with the full default arity (t, s and up to 9 coordinates).
pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(ExprError::Syntax { pos: p.at(), msg: "trailing input".into() });
    }
    Ok(e)
}

/// Parse and check that only variables allowed by `arity` appear.
pub fn parse_with(src: &str, arity: Arity) -> Result<Expr, ExprError> {
    let e = parse(src)?;
    e.check_arity(arity)?;
    Ok(e)
}

// ---------------------------------------------------------------------------
// Evaluation

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => match v {
                Var::T => env.t.ok_or_else(|| ExprError::Unbound("t".into()))?,
                Var::S => env.s.ok_or_else(|| ExprError::Unbound("s".into()))?,
                Var::X(i) => *env.x.get(*i).ok_or_else(|| ExprError::Unbound(format!("x{}", i + 1)))?,
            },
            Expr::Unary(op, a) => {
                let a = a.eval(env)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Abs => a.abs(),
                    UnaryOp::Sign => sign(a),
                    UnaryOp::Log => {
                        if a <= 0.0 {
                            return Err(ExprError::Domain { op: "log", value: a });
                        }
                        a.ln()
                    }
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::Domain { op: "sqrt", value: a });
                        }
                        a.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval(env)?;
                let b = b.eval(env)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::DivisionByZero);
                        }
                        a / b
                    }
                    BinaryOp::Pow => pow(a, b)?,
                }
            }
            Expr::Clamp(a, lo, hi) => a.eval(env)?.clamp(*lo, *hi),
            Expr::Inside(a, lo, hi) => {
                let a = a.eval(env)?;
                if a > *lo && a < *hi {
                    1.0
                } else {
                    0.0
                }
            }
            Expr::SumCos2(n) => sum_trig(env, *n, |c| (PI * c).cos().powi(2))?,
            Expr::SumSin2(n) => sum_trig(env, *n, |c| (PI * c).sin().powi(2))?,
        })
    }

    pub fn check_arity(&self, arity: Arity) -> Result<(), ExprError> {
        let mut err = None;
        self.visit(&mut |e| {
            if err.is_some() {
                return;
            }
            let bad = match e {
                Expr::Var(Var::T) if !arity.t => Some("t".to_string()),
                Expr::Var(Var::S) if !arity.s => Some("s".to_string()),
                Expr::Var(Var::X(i)) if *i >= arity.x_dim => Some(format!("x{}", i + 1)),
                Expr::SumCos2(n) | Expr::SumSin2(n) if *n > arity.x_dim => Some(format!("x{n}")),
                _ => None,
            };
            if let Some(name) = bad {
                err = Some(ExprError::Undeclared(name));
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self {
            Expr::Unary(_, a) | Expr::Clamp(a, _, _) | Expr::Inside(a, _, _) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    pub fn depends_on(&self, var: Var) -> bool {
        let mut hit = false;
        self.visit(&mut |e| match e {
            Expr::Var(v) if *v == var => hit = true,
            Expr::SumCos2(n) | Expr::SumSin2(n) => {
                if let Var::X(i) = var {
                    hit |= i < *n;
                }
            }
            _ => {}
        });
        hit
    }

    /// Largest spatial coordinate index referenced, plus one.
    pub fn x_dim(&self) -> usize {
        let mut d = 0;
        self.visit(&mut |e| match e {
            Expr::Var(Var::X(i)) => d = d.max(i + 1),
            Expr::SumCos2(n) | Expr::SumSin2(n) => d = d.max(*n),
            _ => {}
        });
        d
    }

    /// Recognises `Σ cᵢ·|v|^{eᵢ}` (or `v^{eᵢ}`) in the variable `var`,
    /// which for positive arguments is a closed-form power sum.
    pub fn as_power_sum(&self, var: Var) -> Option<Vec<(f64, f64)>> {
        fn is_var(e: &Expr, var: Var) -> bool {
            match e {
                Expr::Var(v) => *v == var,
                Expr::Unary(UnaryOp::Abs, a) => is_var(a, var),
                _ => false,
            }
        }
        fn term(e: &Expr, var: Var) -> Option<Vec<(f64, f64)>> {
            match e {
                Expr::Const(c) => Some(vec![(*c, 0.0)]),
                e if is_var(e, var) => Some(vec![(1.0, 1.0)]),
                Expr::Binary(BinaryOp::Pow, a, b) if is_var(a, var) => match **b {
                    Expr::Const(p) => Some(vec![(1.0, p)]),
                    _ => None,
                },
                Expr::Unary(UnaryOp::Neg, a) => {
                    term(a, var).map(|v| v.into_iter().map(|(c, p)| (-c, p)).collect())
                }
                Expr::Binary(BinaryOp::Add, a, b) => {
                    let mut v = term(a, var)?;
                    v.extend(term(b, var)?);
                    Some(v)
                }
                Expr::Binary(BinaryOp::Sub, a, b) => {
                    let mut v = term(a, var)?;
                    v.extend(term(b, var)?.into_iter().map(|(c, p)| (-c, p)));
                    Some(v)
                }
                Expr::Binary(BinaryOp::Mul, a, b) => {
                    let (l, r) = (term(a, var)?, term(b, var)?);
                    let mut v = Vec::new();
                    for (c1, p1) in &l {
                        for (c2, p2) in &r {
                            v.push((c1 * c2, p1 + p2));
                        }
                    }
                    Some(v)
                }
                Expr::Binary(BinaryOp::Div, a, b) => match **b {
                    Expr::Const(d) if d != 0.0 => {
                        term(a, var).map(|v| v.into_iter().map(|(c, p)| (c / d, p)).collect())
                    }
                    _ => None,
                },
                _ => None,
            }
        }
        term(self, var)
    }
}

fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pow(a: f64, b: f64) -> Result<f64, ExprError> {
    if a == 0.0 && b < 0.0 {
        return Err(ExprError::DivisionByZero);
    }
    if a < 0.0 && b.fract() != 0.0 {
        return Err(ExprError::Domain { op: "pow", value: a });
    }
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        Ok(a.powi(b as i32))
    } else {
        Ok(a.powf(b))
    }
}

fn sum_trig(env: &Env<'_>, n: usize, f: impl Fn(f64) -> f64) -> Result<f64, ExprError> {
    if env.x.len() < n {
        return Err(ExprError::Unbound(format!("x{}", env.x.len() + 1)));
    }
    Ok(env.x[..n].iter().map(|&c| f(c)).sum())
}

// ---------------------------------------------------------------------------
// Symbolic differentiation with constant folding

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x + y),
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x - y),
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => c(x * y),
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => c(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        _ if is_const(&a, -1.0) => neg(b),
        _ if is_const(&b, -1.0) => neg(a),
        _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => c(x / y),
        _ if is_const(&a, 0.0) => c(0.0),
        _ if is_const(&b, 1.0) => a,
        _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
    }
}

fn powe(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => match pow(*x, *y) {
            Ok(v) if v.is_finite() => c(v),
            _ => Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b)),
        },
        _ if is_const(&b, 1.0) => a,
        _ if is_const(&b, 0.0) => c(1.0),
        _ => Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => c(-x),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn un(op: UnaryOp, a: Expr) -> Expr {
    if let Expr::Const(x) = a {
        let folded = Expr::Unary(op, Box::new(c(x))).eval(&Env::default());
        if let Ok(v) = folded {
            if v.is_finite() {
                return c(v);
            }
        }
    }
    if op == UnaryOp::Neg {
        return neg(a);
    }
    Expr::Unary(op, Box::new(a))
}

/// Symbolic partial derivative. `|u|` differentiates to `sign(u)·u'` with
/// `sign(0) = 0`; `clamp` differentiates to `inside(..)·u'`.
pub fn differentiate(e: &Expr, var: Var) -> Expr {
    match e {
        Expr::Const(_) => c(0.0),
        Expr::Var(v) => c(if *v == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = differentiate(a, var);
            if is_const(&da, 0.0) {
                return c(0.0);
            }
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Abs => mul(un(UnaryOp::Sign, a), da),
                UnaryOp::Sign => c(0.0),
                UnaryOp::Log => div(da, a),
                UnaryOp::Exp => mul(un(UnaryOp::Exp, a), da),
                UnaryOp::Sin => mul(un(UnaryOp::Cos, a), da),
                UnaryOp::Cos => neg(mul(un(UnaryOp::Sin, a), da)),
                UnaryOp::Sqrt => div(da, mul(c(2.0), un(UnaryOp::Sqrt, a))),
            }
        }
        Expr::Binary(op, a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => add(da, db),
                BinaryOp::Sub => sub(da, db),
                BinaryOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                BinaryOp::Div => {
                    if is_const(&db, 0.0) {
                        div(da, b)
                    } else {
                        sub(div(da, b.clone()), div(mul(a, db), powe(b, c(2.0))))
                    }
                }
                BinaryOp::Pow => {
                    if is_const(&db, 0.0) {
                        if is_const(&da, 0.0) {
                            return c(0.0);
                        }
                        // d(a^k) = k a^(k-1) a'
                        let km1 = sub(b.clone(), c(1.0));
                        mul(mul(b, powe(a, km1)), da)
                    } else {
                        // d(a^b) = a^b (b' ln a + b a'/a)
                        let lhs = mul(db, un(UnaryOp::Log, a.clone()));
                        let rhs = div(mul(b.clone(), da), a.clone());
                        mul(powe(a, b), add(lhs, rhs))
                    }
                }
            }
        }
        Expr::Clamp(a, lo, hi) => {
            let da = differentiate(a, var);
            if is_const(&da, 0.0) {
                return c(0.0);
            }
            mul(Expr::Inside(a.clone(), *lo, *hi), da)
        }
        Expr::Inside(..) => c(0.0),
        Expr::SumCos2(n) | Expr::SumSin2(n) => match var {
            Var::X(i) if i < *n => {
                let sgn = if matches!(e, Expr::SumCos2(_)) { -PI } else { PI };
                mul(c(sgn), un(UnaryOp::Sin, mul(c(2.0 * PI), Expr::Var(Var::X(i)))))
            }
            _ => c(0.0),
        },
    }
}

// ---------------------------------------------------------------------------
// Printing

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
        Expr::Binary(BinaryOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v == PI {
                    write!(f, "pi")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(op, a) => match op {
                UnaryOp::Neg => {
                    write!(f, "-")?;
                    write_operand(f, a, prec(a) <= 3)
                }
                UnaryOp::Abs => write!(f, "|{a}|"),
                UnaryOp::Sign => write!(f, "sign({a})"),
                UnaryOp::Log => write!(f, "log({a})"),
                UnaryOp::Exp => write!(f, "exp({a})"),
                UnaryOp::Sin => write!(f, "sin({a})"),
                UnaryOp::Cos => write!(f, "cos({a})"),
                UnaryOp::Sqrt => write!(f, "sqrt({a})"),
            },
            Expr::Binary(op, a, b) => {
                let (sym, p) = match op {
                    BinaryOp::Add => ("+", 1),
                    BinaryOp::Sub => ("-", 1),
                    BinaryOp::Mul => ("*", 2),
                    BinaryOp::Div => ("/", 2),
                    BinaryOp::Pow => ("^", 4),
                };
                let (lp, rp) = if *op == BinaryOp::Pow {
                    (prec(a) <= 4, prec(b) < 3)
                } else {
                    // negative constants and negations need parens unless leftmost
                    (prec(a) < p, prec(b) <= p || prec(b) == 3)
                };
                write_operand(f, a, lp)?;
                write!(f, "{sym}")?;
                write_operand(f, b, rp)
            }
            Expr::Clamp(a, lo, hi) => write!(f, "clamp({a}, {}, {})", Expr::Const(*lo), Expr::Const(*hi)),
            Expr::Inside(a, lo, hi) => write!(f, "inside({a}, {}, {})", Expr::Const(*lo), Expr::Const(*hi)),
            Expr::SumCos2(n) => write!(f, "sum_cos2(x, {n})"),
            Expr::SumSin2(n) => write!(f, "sum_sin2(x, {n})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_growth_kernel() {
        let e = parse("4*|t|^2+5*|t|^3").unwrap();
        let abs_t = Expr::Unary(UnaryOp::Abs, Box::new(Expr::Var(Var::T)));
        let term = |k: f64, p: f64| {
            Expr::Binary(
                BinaryOp::Mul,
                Box::new(c(k)),
                Box::new(Expr::Binary(BinaryOp::Pow, Box::new(abs_t.clone()), Box::new(c(p)))),
            )
        };
        assert_eq!(e, Expr::Binary(BinaryOp::Add, Box::new(term(4.0, 2.0)), Box::new(term(5.0, 3.0))));
        assert_eq!(e.eval(&Env::t(1.0)).unwrap(), 9.0);
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse("t").unwrap(), Expr::Var(Var::T));
    }

    #[test]
    fn builtin_periodic_weight() {
        let e = parse("1+sum_cos2(x,6)").unwrap();
        assert_eq!(e, Expr::Binary(BinaryOp::Add, Box::new(c(1.0)), Box::new(Expr::SumCos2(6))));
        let x = [0.0; 6];
        assert_eq!(e.eval(&Env { x: &x, ..Env::default() }).unwrap(), 7.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let env = Env::t(2.0);
        assert_eq!(parse("-t^2").unwrap().eval(&env).unwrap(), -4.0);
        assert_eq!(parse("2^3^2").unwrap().eval(&env).unwrap(), 512.0);
        assert_eq!(parse("1-2-3").unwrap().eval(&env).unwrap(), -4.0);
        assert_eq!(parse("8/4/2").unwrap().eval(&env).unwrap(), 1.0);
        assert_eq!(parse("t^-1").unwrap().eval(&env).unwrap(), 0.5);
        assert_eq!(parse("2*-t").unwrap().eval(&env).unwrap(), -4.0);
    }

    #[test]
    fn worked_nonlinearity_at_unit_point() {
        let e = parse("|t|^(17/2)+|s|^(17/2)+|t|^7*|s|^7").unwrap();
        assert_eq!(e.eval(&Env::ts(1.0, 0.0, &[])).unwrap(), 1.0);
    }

    #[test]
    fn errors_surface() {
        let e = parse("t/s").unwrap();
        assert_eq!(e.eval(&Env::ts(1.0, 0.0, &[])), Err(ExprError::DivisionByZero));
        assert!(matches!(parse("log(t)").unwrap().eval(&Env::t(-1.0)), Err(ExprError::Domain { .. })));
        assert!(matches!(parse("sqrt(t)").unwrap().eval(&Env::t(-1.0)), Err(ExprError::Domain { .. })));
        assert_eq!(parse("s").unwrap().eval(&Env::t(1.0)), Err(ExprError::Unbound("s".into())));
        assert!(matches!(parse("4*|t|^2+"), Err(ExprError::Syntax { pos: 8, .. })));
        assert!(matches!(parse("foo(t)"), Err(ExprError::UnknownIdentifier { pos: 0, .. })));
        assert!(matches!(parse("(t"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("t $"), Err(ExprError::Syntax { pos: 2, .. })));
    }

    #[test]
    fn arity_is_enforced() {
        assert!(parse_with("t+s", Arity::T).is_err());
        assert!(parse_with("t+x2", Arity::new(true, false, 1)).is_err());
        assert!(parse_with("t*(1+sum_cos2(x,6))", Arity::new(true, false, 6)).is_ok());
    }

    #[test]
    fn derivative_of_square() {
        let d = differentiate(&parse("t^2").unwrap(), Var::T);
        assert_eq!(d.to_string(), "2*t");
        assert_eq!(differentiate(&parse("3.5").unwrap(), Var::T), c(0.0));
        assert_eq!(differentiate(&parse("s^2").unwrap(), Var::T), c(0.0));
    }

    #[test]
    fn worked_partial_in_t() {
        let f = parse("|t|^(17/2)+|s|^(17/2)+|t|^7*|s|^7").unwrap();
        let ft = differentiate(&f, Var::T);
        assert_relative_eq!(ft.eval(&Env::ts(1.0, 1.0, &[])).unwrap(), 15.5, epsilon = 1e-14);
        // symbolic formula 17/2|t|^{13/2}t + 7|t|^5|s|^7 t at another point
        let (t, s) = (-0.7f64, 0.4f64);
        let want = 8.5 * t.abs().powf(6.5) * t + 7.0 * t.abs().powi(5) * s.abs().powi(7) * t;
        assert_relative_eq!(ft.eval(&Env::ts(t, s, &[])).unwrap(), want, epsilon = 1e-13);
    }

    #[test]
    fn abs_derivative_at_origin_is_zero() {
        let d = differentiate(&parse("|t|^3").unwrap(), Var::T);
        assert_eq!(d.eval(&Env::t(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn periodic_weight_gradient() {
        let e = parse("sum_cos2(x,2)").unwrap();
        let d = differentiate(&e, Var::X(1));
        let x = [0.1, 0.3];
        let h = 1e-6;
        let fd = (e.eval(&Env { x: &[0.1, 0.3 + h], ..Env::default() }).unwrap()
            - e.eval(&Env { x: &[0.1, 0.3 - h], ..Env::default() }).unwrap())
            / (2.0 * h);
        assert_relative_eq!(d.eval(&Env { x: &x, ..Env::default() }).unwrap(), fd, epsilon = 1e-8);
    }

    #[test]
    fn clamp_derivative_is_indicator() {
        let e = parse("clamp(t^2, 1, 4)").unwrap();
        let d = differentiate(&e, Var::T);
        assert_eq!(d.eval(&Env::t(0.5)).unwrap(), 0.0);
        assert_relative_eq!(d.eval(&Env::t(1.5)).unwrap(), 3.0);
        assert_eq!(d.eval(&Env::t(3.0)).unwrap(), 0.0);
    }

    #[test]
    fn power_sum_recognition() {
        let e = parse("4*|t|^2+5*|t|^3").unwrap();
        assert_eq!(e.as_power_sum(Var::T), Some(vec![(4.0, 2.0), (5.0, 3.0)]));
        assert_eq!(parse("t^(-0.5)").unwrap().as_power_sum(Var::T), Some(vec![(1.0, -0.5)]));
        assert_eq!(parse("4*t^2*log(2+t)").unwrap().as_power_sum(Var::T), None);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn leaf() -> impl Strategy<Value = Expr> {
        prop_oneof![
            (-3.0f64..3.0).prop_map(|v| Expr::Const((v * 8.0).round() / 8.0)),
            Just(Expr::Var(Var::T)),
            Just(Expr::Var(Var::S)),
        ]
    }

    // Smooth operations only, so central differences are meaningful.
    fn smooth_expr() -> impl Strategy<Value = Expr> {
        leaf().prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Unary(UnaryOp::Sin, Box::new(a))),
                inner.clone().prop_map(|a| Expr::Unary(UnaryOp::Cos, Box::new(a))),
                inner.clone().prop_map(|a| Expr::Unary(UnaryOp::Neg, Box::new(a))),
                inner.clone().prop_map(|a| Expr::Unary(
                    UnaryOp::Exp,
                    Box::new(Expr::Unary(UnaryOp::Sin, Box::new(a)))
                )),
                inner.clone().prop_map(|a| Expr::Unary(
                    UnaryOp::Log,
                    Box::new(Expr::Binary(
                        BinaryOp::Add,
                        Box::new(Expr::Const(1.0)),
                        Box::new(Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(Expr::Const(2.0))))
                    ))
                )),
                (inner.clone(), 2u8..4).prop_map(|(a, k)| Expr::Binary(
                    BinaryOp::Pow,
                    Box::new(a),
                    Box::new(Expr::Const(k as f64))
                )),
                inner.clone().prop_map(|a| Expr::Binary(
                    BinaryOp::Pow,
                    Box::new(Expr::Unary(UnaryOp::Abs, Box::new(a))),
                    Box::new(Expr::Const(2.5))
                )),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn derivative_matches_central_difference(
            e in smooth_expr(),
            pts in proptest::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 10),
        ) {
            let dt = differentiate(&e, Var::T);
            let ds = differentiate(&e, Var::S);
            let h = 1e-6;
            for (t, s) in pts {
                let f = |t: f64, s: f64| e.eval(&Env::ts(t, s, &[])).unwrap();
                if f(t, s).abs() > 1e6 {
                    continue;
                }
                let fd_t = (f(t + h, s) - f(t - h, s)) / (2.0 * h);
                let fd_s = (f(t, s + h) - f(t, s - h)) / (2.0 * h);
                let sym_t = dt.eval(&Env::ts(t, s, &[])).unwrap();
                let sym_s = ds.eval(&Env::ts(t, s, &[])).unwrap();
                let scale = 1.0 + f(t, s).abs();
                prop_assert!((sym_t - fd_t).abs() <= 1e-5 * scale.max(fd_t.abs()), "{e}: d/dt {sym_t} vs {fd_t}");
                prop_assert!((sym_s - fd_s).abs() <= 1e-5 * scale.max(fd_s.abs()), "{e}: d/ds {sym_s} vs {fd_s}");
            }
        }

        #[test]
        fn print_parse_round_trip(e in smooth_expr()) {
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            // parsing folds -c into a constant, so generated trees are compared by value
            for (t, s) in [(0.3, -0.7), (1.1, 0.2), (-0.4, 0.9)] {
                let env = Env::ts(t, s, &[]);
                let (a, b) = (e.eval(&env).unwrap(), back.eval(&env).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{printed}: {a} vs {b}");
            }
            let reprinted = back.to_string();
            prop_assert_eq!(parse(&reprinted).unwrap(), back);
        }
    }
}
